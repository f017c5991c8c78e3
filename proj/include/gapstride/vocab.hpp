#pragma once

#include <string>
#include <vector>

namespace gapstride {

// Registered longitudinal variable vocabulary. Ids are 1-based so they can be
// carried verbatim in observation triplets; ANCHOR is the sentinel token
// emitted for otherwise-empty histories.
namespace vocab {

enum Id : int {
  kDx = 1,
  kCdrsb = 2,
  kMmse = 3,
  kAdas13 = 4,
  kFaq = 5,
  kWholeBrain = 6,
  kVentricles = 7,
  kHippocampus = 8,
  kEntorhinal = 9,
  kFusiform = 10,
  kMidTemp = 11,
  kInfTemp = 12,
  kAbeta = 13,
  kTau = 14,
  kPtau = 15,
  kAnchor = 16,
};

constexpr int kCount = 16;

// DX levels carried in the value column.
constexpr double kDxCn = 0.0;
constexpr double kDxMci = 1.0;
constexpr double kDxAd = 2.0;

const std::vector<std::string>& names();
const std::string& name_of(int id);
int id_of(const std::string& name);  // 0 when unknown

bool is_clinical(int id);
bool is_mri(int id);
bool is_csf(int id);

}  // namespace vocab

/// Anchor-level covariate columns, grouped into the blocks the stepwise
/// selection walks over.
struct CovariateSchema {
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::vector<std::string>>> blocks;

  static const CovariateSchema& instance();
  int index_of(const std::string& column) const;  // -1 when unknown
  int size() const { return static_cast<int>(columns.size()); }
};

}  // namespace gapstride
