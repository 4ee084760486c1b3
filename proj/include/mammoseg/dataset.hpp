#pragma once

#include <string>
#include <vector>

#include "mammoseg/image.hpp"

namespace mammoseg {

// Fixed class order; it defines the confusion-matrix axes.
enum ShapeLabel : int { kIrregular = 0, kLobular = 1, kOval = 2, kRound = 3 };

const char* shape_label_name(int label);
int shape_label_from_name(const std::string& name);

struct DatasetEntry {
  std::string filename;
  GrayImage image;
  BinaryMask mask;
  int label = -1;  // -1 when labels.csv has no entry (segmentation-only sets)
};

/// Directory layout: <dir>/images/*.pgm, <dir>/masks/*.pgm (same filenames),
/// optional <dir>/labels.csv with columns filename,shape_label. Entries load
/// in lexicographic filename order.
struct Dataset {
  std::vector<DatasetEntry> entries;
  bool has_labels = false;

  std::vector<int> labels() const;
};

Dataset load_dataset(const std::string& dir);

}  // namespace mammoseg
