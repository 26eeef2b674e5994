#pragma once

#include <string>
#include <vector>

#include "msgnn/image.hpp"

namespace msgnn {

struct DatasetEntry {
    std::string name;  // shared file stem
    Image rainy;
    Image clean;
};

// Paired dataset laid out as <root>/rain/<name>.png + <root>/norain/<name>.png,
// paired by identical stem, sorted by name. Unpaired files on either side are
// a DatasetError listing every offender.
std::vector<DatasetEntry> load_dataset(const std::string& root);

// Deterministic held-out split: the last 20% (rounded down) of entries by
// sorted name. When that rounds to zero the evaluation set falls back to the
// full dataset.
struct DatasetSplit {
    std::vector<DatasetEntry> train;
    std::vector<DatasetEntry> eval;
};
DatasetSplit split_dataset(std::vector<DatasetEntry> entries);

}  // namespace msgnn
