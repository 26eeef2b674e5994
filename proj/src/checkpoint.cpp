#include "msgnn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "msgnn/errors.hpp"

namespace msgnn {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'G', 'N'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError(path + ": truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, const float* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        write_u32(os, bits);
    }
}

void read_f32(std::istream& is, float* data, std::size_t n, const std::string& path) {
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t bits = read_u32(is, path);
        std::memcpy(&data[i], &bits, 4);
    }
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + path);

    os.write(kMagic, 4);
    write_u32(os, kVersion);

    const std::string cfg = serialize_model_config(model.config());
    write_u32(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    const auto& store = model.params();
    write_u32(os, static_cast<std::uint32_t>(store.count()));
    for (int id = 0; id < store.count(); ++id) {
        const std::string& name = store.name(id);
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Shape& shape = store.shape(id);
        write_u32(os, static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) write_u32(os, static_cast<std::uint32_t>(d));
        write_f32(os, store.values(id).data(), store.values(id).size());
    }
    if (!os) throw IoError("write failed for checkpoint " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path);

    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError(path + ": not a checkpoint file");
    const std::uint32_t version = read_u32(is, path);
    if (version != kVersion)
        throw CheckpointError(path + ": unsupported format version " + std::to_string(version));

    const std::uint32_t cfg_len = read_u32(is, path);
    std::string cfg_text(cfg_len, '\0');
    if (!is.read(cfg_text.data(), cfg_len)) throw CheckpointError(path + ": truncated config snapshot");

    Model model(parse_model_config(cfg_text));
    auto& store = model.params();

    const std::uint32_t count = read_u32(is, path);
    if (static_cast<int>(count) != store.count())
        throw CheckpointError(path + ": tensor count " + std::to_string(count) + " does not match config (" +
                              std::to_string(store.count()) + " expected)");

    std::vector<bool> filled(static_cast<std::size_t>(store.count()), false);
    for (std::uint32_t rec = 0; rec < count; ++rec) {
        const std::uint32_t name_len = read_u32(is, path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw CheckpointError(path + ": truncated tensor name");
        const int id = store.find(name);
        if (id < 0) throw CheckpointError(path + ": unexpected tensor '" + name + "' for this config");
        if (filled[static_cast<std::size_t>(id)]) throw CheckpointError(path + ": duplicate tensor '" + name + "'");

        const std::uint32_t rank = read_u32(is, path);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<int>(read_u32(is, path));
        if (shape != store.shape(id))
            throw CheckpointError(path + ": tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                                  shape_str(store.shape(id)));
        read_f32(is, store.values(id).data(), store.values(id).size(), path);
        filled[static_cast<std::size_t>(id)] = true;
    }
    return model;
}

}  // namespace msgnn
