#include "mammoseg/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "mammoseg/pgm.hpp"

namespace mammoseg {

namespace fs = std::filesystem;

const char* shape_label_name(int label) {
  switch (label) {
    case kIrregular: return "irregular";
    case kLobular: return "lobular";
    case kOval: return "oval";
    case kRound: return "round";
  }
  throw ContractError("shape label out of range: " + std::to_string(label));
}

int shape_label_from_name(const std::string& name) {
  for (int i = 0; i < 4; ++i)
    if (name == shape_label_name(i)) return i;
  throw ParseError("unknown shape label '" + name + "'", 0);
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(entries.size());
  for (const DatasetEntry& e : entries) out.push_back(e.label);
  return out;
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  const fs::path images = root / "images";
  const fs::path masks = root / "masks";
  if (!fs::is_directory(images)) throw IoError(images.string(), "missing images directory");
  if (!fs::is_directory(masks)) throw IoError(masks.string(), "missing masks directory");

  std::map<std::string, int> label_by_name;
  Dataset ds;
  const fs::path labels_csv = root / "labels.csv";
  if (fs::exists(labels_csv)) {
    ds.has_labels = true;
    std::ifstream f(labels_csv);
    if (!f) throw IoError(labels_csv.string(), "cannot open");
    std::string line;
    bool header = true;
    while (std::getline(f, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (header) {
        header = false;
        if (line.rfind("filename", 0) == 0) continue;  // header row present
      }
      const auto comma = line.find(',');
      if (comma == std::string::npos)
        throw ParseError("labels.csv row without a comma: " + line, 0);
      label_by_name[line.substr(0, comma)] = shape_label_from_name(line.substr(comma + 1));
    }
  }

  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().extension() != ".pgm") continue;
    names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());

  for (const std::string& name : names) {
    DatasetEntry e;
    e.filename = name;
    e.image = read_pgm((images / name).string());
    const fs::path mask_path = masks / name;
    if (!fs::exists(mask_path)) throw IoError(mask_path.string(), "missing mask for image");
    e.mask = read_pgm_mask(mask_path.string());
    if (ds.has_labels) {
      auto it = label_by_name.find(name);
      if (it != label_by_name.end()) e.label = it->second;
    }
    ds.entries.push_back(std::move(e));
  }
  return ds;
}

}  // namespace mammoseg
