#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gapstride/vocab.hpp"

namespace gapstride {

class CohortError : public std::invalid_argument {
 public:
  explicit CohortError(const std::string& what) : std::invalid_argument(what) {}
};

struct VisitRecord {
  std::string participant_id;
  double visit_month = 0.0;  // months since the participant's first visit
  int variable = 0;          // vocabulary id
  double value = 0.0;        // native units
  int source_line = 0;
};

struct StaticRecord {
  std::string participant_id;
  double age = 0.0;  // years at first visit
  int sex = 0;       // {0,1}
  double education = 0.0;
  int apoe4 = 0;  // allele count in {0,1,2}
  int source_line = 0;
};

/// Per-variable standardization statistics from the training partition only.
/// Standardized values are clipped to +-clip_sd.
struct TrainStats {
  std::array<double, vocab::kCount> mean{};
  std::array<double, vocab::kCount> sd{};
  double clip_sd = 6.0;

  double standardize(int variable, double value) const;
  std::uint64_t digest() const;
};

struct CohortTable {
  std::vector<VisitRecord> visits;    // sorted by (participant, month, variable)
  std::vector<StaticRecord> statics;  // sorted by participant
  std::optional<TrainStats> stats;    // unfilled until a training partition exists

  const StaticRecord* find_static(const std::string& participant_id) const;
  std::vector<std::string> participant_ids() const;
};

struct ObservationTriplet {
  double tau = 0.0;  // months relative to anchor, <= 0
  int k = 0;         // vocabulary id
  double v = 0.0;    // raw value here; standardized at tokenization
};

struct History {
  std::vector<ObservationTriplet> triplets;
};

struct AnchorSample {
  std::string participant_id;
  double anchor_month = 0.0;
  std::vector<double> x;  // CovariateSchema order; NaN marks a missing value
  History history;
  double y = 0.0;  // future CDR-SB minus anchor CDR-SB
  double gap_months = 0.0;
};

struct CohortSummary {
  long n_anchors = 0;
  long n_participants = 0;
  long n_rows = 0;
  double median_gap_months = 0.0;  // NaN when undefined
  double same_visit_mri_pct = 0.0;
  double any_prior_mri_pct = 0.0;
  double same_visit_csf_pct = 0.0;
  double any_prior_csf_pct = 0.0;
};

struct AnchorBuildReport {
  long n_mci_visits = 0;
  long excluded_no_anchor_cdrsb = 0;
  long excluded_no_outcome_in_window = 0;
};

struct AnchorBuildResult {
  std::vector<AnchorSample> samples;
  AnchorBuildReport report;
};

struct SyntheticNoise {
  double cdrsb = 0.18;     // SD of the per-interval CDR-SB increment noise
  double clinical = 0.8;   // SD scale for MMSE / ADAS13 / FAQ measurement noise
  double mri = 0.02;       // relative SD for MRI summaries
  double csf = 0.05;       // relative SD for CSF values
};

struct SyntheticConfig {
  int n_participants = 200;
  double visit_spacing_mean = 6.0;
  double visit_spacing_jitter = 1.5;
  double dropout_per_visit = 0.06;  // probability follow-up ends after a visit
  double p_mri = 0.4;               // participant-level modality availability
  double p_csf = 0.6;
  double mri_revisit = 0.35;  // per-visit re-observation rate once available
  double csf_revisit = 0.2;
  double residual_strength = 0.0;        // CDR-SB slope gain per unit decayed ADAS13 slope
  double residual_decay_per_month = 0.15;
  SyntheticNoise noise;
  std::uint64_t seed = 42;
  int max_visits = 14;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

CohortTable ingest_long_table(const std::string& visits_file, const std::string& static_file);

// Shared validation/sorting path used by the file reader, the synthesizer,
// and tests that construct records directly.
CohortTable ingest_records(std::vector<VisitRecord> visits, std::vector<StaticRecord> statics);

AnchorBuildResult build_anchors(const CohortTable& cohort, double window_lo = 18.0, double window_hi = 30.0,
                                double horizon = 24.0, int m_max = 256);

CohortSummary summarize_cohort(const std::vector<AnchorSample>& anchors, const CohortTable& cohort);

CohortTable generate_synthetic(const SyntheticConfig& config);

// Token-value statistics over the visit rows of the given (training)
// participants.
TrainStats compute_train_stats(const CohortTable& cohort, const std::vector<std::string>& train_participants);

// ---------------------------------------------------------------------------
// File interfaces. '#'-prefixed comment lines carry provenance and are
// skipped on read.
// ---------------------------------------------------------------------------

void write_visits_csv(const std::string& path, const CohortTable& cohort, const std::string& provenance);
void write_static_csv(const std::string& path, const CohortTable& cohort, const std::string& provenance);
void write_anchors_jsonl(const std::string& path, const std::vector<AnchorSample>& anchors, const std::string& provenance);
void write_summary_json(const std::string& path, const CohortSummary& summary, const AnchorBuildReport& report,
                        const std::string& provenance);

}  // namespace gapstride
