#include "msgnn/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <map>

#include "msgnn/errors.hpp"
#include "msgnn/png_io.hpp"

namespace msgnn {

namespace fs = std::filesystem;

namespace {

std::map<std::string, fs::path> list_pngs(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DatasetError("dataset: missing directory " + dir.string());
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().extension() != ".png") continue;
        out.emplace(entry.path().stem().string(), entry.path());
    }
    return out;
}

}  // namespace

std::vector<DatasetEntry> load_dataset(const std::string& root) {
    const fs::path base(root);
    auto rainy = list_pngs(base / "rain");
    auto clean = list_pngs(base / "norain");

    std::string offenders;
    for (const auto& [stem, path] : rainy)
        if (!clean.count(stem)) offenders += " rain/" + stem + ".png";
    for (const auto& [stem, path] : clean)
        if (!rainy.count(stem)) offenders += " norain/" + stem + ".png";
    if (!offenders.empty()) throw DatasetError("dataset: unpaired files:" + offenders);
    if (rainy.empty()) throw DatasetError("dataset: no image pairs under " + root);

    std::vector<DatasetEntry> entries;
    entries.reserve(rainy.size());
    for (const auto& [stem, path] : rainy) {
        DatasetEntry e;
        e.name = stem;
        e.rainy = load_png(path.string());
        e.clean = load_png(clean.at(stem).string());
        if (e.rainy.height != e.clean.height || e.rainy.width != e.clean.width)
            throw DatasetError("dataset: pair '" + stem + "' has mismatched dimensions");
        entries.push_back(std::move(e));
    }
    std::sort(entries.begin(), entries.end(),
              [](const DatasetEntry& a, const DatasetEntry& b) { return a.name < b.name; });
    return entries;
}

DatasetSplit split_dataset(std::vector<DatasetEntry> entries) {
    const std::size_t n_eval = entries.size() / 5;
    DatasetSplit split;
    if (n_eval == 0) {
        split.eval = entries;
        split.train = std::move(entries);
        return split;
    }
    split.eval.assign(entries.end() - static_cast<std::ptrdiff_t>(n_eval), entries.end());
    entries.resize(entries.size() - n_eval);
    split.train = std::move(entries);
    return split;
}

}  // namespace msgnn
