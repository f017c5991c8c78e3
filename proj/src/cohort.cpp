#include "gapstride/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "gapstride/rng.hpp"
#include "json.hpp"

namespace gapstride {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kRecencySentinel = 999.0;  // months; "never observed"
}  // namespace

// ---------------------------------------------------------------------------
// vocabulary
// ---------------------------------------------------------------------------

namespace vocab {

const std::vector<std::string>& names() {
  static const std::vector<std::string> kNames = {
      "DX",         "CDRSB",    "MMSE",       "ADAS13", "FAQ",     "WholeBrain", "Ventricles", "Hippocampus",
      "Entorhinal", "Fusiform", "MidTemp",    "InfTemp", "ABETA",  "TAU",        "PTAU",       "ANCHOR"};
  return kNames;
}

const std::string& name_of(int id) { return names().at(static_cast<std::size_t>(id - 1)); }

int id_of(const std::string& name) {
  const auto& ns = names();
  for (std::size_t i = 0; i < ns.size(); ++i)
    if (ns[i] == name) return static_cast<int>(i) + 1;
  return 0;
}

bool is_clinical(int id) { return id == kCdrsb || id == kMmse || id == kAdas13 || id == kFaq; }
bool is_mri(int id) { return id >= kWholeBrain && id <= kInfTemp; }
bool is_csf(int id) { return id == kAbeta || id == kTau || id == kPtau; }

}  // namespace vocab

// ---------------------------------------------------------------------------
// covariate schema
// ---------------------------------------------------------------------------

const CovariateSchema& CovariateSchema::instance() {
  static const CovariateSchema schema = [] {
    CovariateSchema s;
    auto block = [&s](std::string name, std::vector<std::string> cols) {
      for (const auto& c : cols) s.columns.push_back(c);
      s.blocks.emplace_back(std::move(name), std::move(cols));
    };
    block("clinical_severity", {"cdrsb_anchor", "mmse_anchor", "adas13_anchor"});
    block("functional", {"faq_anchor"});
    block("demographics", {"age_at_anchor", "sex", "education"});
    block("genetic", {"apoe4"});
    block("timing", {"months_from_first_visit", "target_gap_months"});
    block("mri_history", {"last_wholebrain", "last_ventricles", "last_hippocampus", "last_entorhinal", "last_fusiform",
                          "last_midtemp", "last_inftemp"});
    block("csf_history", {"last_abeta", "last_tau", "last_ptau"});
    block("missingness", {"miss_cdrsb", "miss_mmse", "miss_adas13", "miss_faq", "miss_wholebrain", "miss_ventricles",
                          "miss_hippocampus", "miss_entorhinal", "miss_fusiform", "miss_midtemp", "miss_inftemp",
                          "miss_abeta", "miss_tau", "miss_ptau"});
    block("recency", {"mri_recency_months", "csf_recency_months"});
    return s;
  }();
  return schema;
}

int CovariateSchema::index_of(const std::string& column) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == column) return static_cast<int>(i);
  return -1;
}

// ---------------------------------------------------------------------------
// TrainStats
// ---------------------------------------------------------------------------

double TrainStats::standardize(int variable, double value) const {
  const double m = mean.at(static_cast<std::size_t>(variable - 1));
  const double s = sd.at(static_cast<std::size_t>(variable - 1));
  double z = (value - m) / s;
  if (z > clip_sd) z = clip_sd;
  if (z < -clip_sd) z = -clip_sd;
  return z;
}

std::uint64_t TrainStats::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (double v : mean) feed(v);
  for (double v : sd) feed(v);
  feed(clip_sd);
  return h;
}

TrainStats compute_train_stats(const CohortTable& cohort, const std::vector<std::string>& train_participants) {
  const std::set<std::string> pids(train_participants.begin(), train_participants.end());
  std::array<double, vocab::kCount> sum{}, sumsq{};
  std::array<long, vocab::kCount> n{};
  for (const auto& v : cohort.visits) {
    if (!pids.count(v.participant_id)) continue;
    const std::size_t k = static_cast<std::size_t>(v.variable - 1);
    sum[k] += v.value;
    sumsq[k] += v.value * v.value;
    ++n[k];
  }
  TrainStats stats;
  for (std::size_t k = 0; k < vocab::kCount; ++k) {
    if (n[k] == 0) {
      stats.mean[k] = 0.0;
      stats.sd[k] = 1.0;
      continue;
    }
    stats.mean[k] = sum[k] / static_cast<double>(n[k]);
    if (n[k] < 2) {
      stats.sd[k] = 1.0;
    } else {
      const double var = (sumsq[k] - static_cast<double>(n[k]) * stats.mean[k] * stats.mean[k]) / static_cast<double>(n[k] - 1);
      stats.sd[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// CohortTable
// ---------------------------------------------------------------------------

const StaticRecord* CohortTable::find_static(const std::string& participant_id) const {
  auto it = std::lower_bound(statics.begin(), statics.end(), participant_id,
                             [](const StaticRecord& s, const std::string& p) { return s.participant_id < p; });
  if (it == statics.end() || it->participant_id != participant_id) return nullptr;
  return &*it;
}

std::vector<std::string> CohortTable::participant_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : statics) ids.push_back(s.participant_id);
  return ids;
}

// ---------------------------------------------------------------------------
// ingestion
// ---------------------------------------------------------------------------

CohortTable ingest_records(std::vector<VisitRecord> visits, std::vector<StaticRecord> statics) {
  for (const auto& v : visits) {
    if (v.visit_month < 0.0) {
      std::ostringstream os;
      os << "negative visit_month " << v.visit_month << " for participant " << v.participant_id;
      if (v.source_line) os << " (line " << v.source_line << ")";
      throw CohortError(os.str());
    }
    if (v.variable < 1 || v.variable > vocab::kCount)
      throw CohortError("variable id out of vocabulary range for participant " + v.participant_id);
  }
  for (const auto& s : statics) {
    if (s.apoe4 < 0 || s.apoe4 > 2) throw CohortError("apoe4 outside {0,1,2} for participant " + s.participant_id);
    if (s.sex != 0 && s.sex != 1) throw CohortError("sex outside {0,1} for participant " + s.participant_id);
  }

  std::stable_sort(statics.begin(), statics.end(),
                   [](const StaticRecord& a, const StaticRecord& b) { return a.participant_id < b.participant_id; });
  for (std::size_t i = 1; i < statics.size(); ++i)
    if (statics[i].participant_id == statics[i - 1].participant_id)
      throw CohortError("duplicate static record for participant " + statics[i].participant_id);

  std::stable_sort(visits.begin(), visits.end(), [](const VisitRecord& a, const VisitRecord& b) {
    if (a.participant_id != b.participant_id) return a.participant_id < b.participant_id;
    if (a.visit_month != b.visit_month) return a.visit_month < b.visit_month;
    return a.variable < b.variable;
  });
  for (std::size_t i = 1; i < visits.size(); ++i) {
    const auto& a = visits[i - 1];
    const auto& b = visits[i];
    if (a.participant_id == b.participant_id && a.visit_month == b.visit_month && a.variable == b.variable) {
      std::ostringstream os;
      os << "duplicate record (" << a.participant_id << ", " << a.visit_month << ", " << vocab::name_of(a.variable)
         << ") at lines " << a.source_line << " and " << b.source_line;
      throw CohortError(os.str());
    }
  }

  CohortTable table;
  table.statics = std::move(statics);
  table.visits = std::move(visits);
  for (const auto& v : table.visits)
    if (!table.find_static(v.participant_id))
      throw CohortError("missing static record for participant " + v.participant_id + " which has visit rows");
  return table;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, int line_no, const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    std::ostringstream os;
    os << "cannot parse " << what << " '" << s << "' at line " << line_no;
    throw CohortError(os.str());
  }
}

}  // namespace

CohortTable ingest_long_table(const std::string& visits_file, const std::string& static_file) {
  std::ifstream sf(static_file);
  if (!sf) throw CohortError("cannot open static file: " + static_file);
  std::vector<StaticRecord> statics;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(sf, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv_line(line);
    if (!header_seen) {
      if (cells != std::vector<std::string>{"participant_id", "age", "sex", "education", "apoe4"})
        throw CohortError("static file header mismatch at line " + std::to_string(line_no));
      header_seen = true;
      continue;
    }
    if (cells.size() != 5) throw CohortError("static file: expected 5 fields at line " + std::to_string(line_no));
    StaticRecord s;
    s.participant_id = cells[0];
    s.age = parse_double(cells[1], line_no, "age");
    s.sex = static_cast<int>(parse_double(cells[2], line_no, "sex"));
    s.education = parse_double(cells[3], line_no, "education");
    s.apoe4 = static_cast<int>(parse_double(cells[4], line_no, "apoe4"));
    s.source_line = line_no;
    statics.push_back(std::move(s));
  }

  std::ifstream vf(visits_file);
  if (!vf) throw CohortError("cannot open visits file: " + visits_file);
  std::vector<VisitRecord> visits;
  line_no = 0;
  header_seen = false;
  while (std::getline(vf, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv_line(line);
    if (!header_seen) {
      if (cells != std::vector<std::string>{"participant_id", "visit_month", "variable", "value"})
        throw CohortError("visits file header mismatch at line " + std::to_string(line_no));
      header_seen = true;
      continue;
    }
    if (cells.size() != 4) throw CohortError("visits file: expected 4 fields at line " + std::to_string(line_no));
    VisitRecord v;
    v.participant_id = cells[0];
    v.visit_month = parse_double(cells[1], line_no, "visit_month");
    v.variable = vocab::id_of(cells[2]);
    if (v.variable == 0) throw CohortError("unknown variable '" + cells[2] + "' at line " + std::to_string(line_no));
    v.value = parse_double(cells[3], line_no, "value");
    v.source_line = line_no;
    visits.push_back(std::move(v));
  }

  return ingest_records(std::move(visits), std::move(statics));
}

// ---------------------------------------------------------------------------
// anchor construction
// ---------------------------------------------------------------------------

namespace {

struct ParticipantRows {
  std::size_t begin = 0, end = 0;  // [begin, end) into cohort.visits
};

// Most recent value of `variable` at or before `month`; nullopt when never
// observed. Rows are the participant's sorted slice.
std::optional<std::pair<double, double>> last_at_or_before(const std::vector<VisitRecord>& visits, const ParticipantRows& rows,
                                                           int variable, double month) {
  std::optional<std::pair<double, double>> best;  // (month, value)
  for (std::size_t i = rows.begin; i < rows.end; ++i) {
    const auto& v = visits[i];
    if (v.variable != variable) continue;
    if (v.visit_month > month) break;
    best = {v.visit_month, v.value};
  }
  return best;
}

std::optional<double> value_at(const std::vector<VisitRecord>& visits, const ParticipantRows& rows, int variable, double month) {
  for (std::size_t i = rows.begin; i < rows.end; ++i) {
    const auto& v = visits[i];
    if (v.visit_month > month) break;
    if (v.visit_month == month && v.variable == variable) return v.value;
  }
  return std::nullopt;
}

}  // namespace

AnchorBuildResult build_anchors(const CohortTable& cohort, double window_lo, double window_hi, double horizon, int m_max) {
  AnchorBuildResult result;
  const CovariateSchema& schema = CovariateSchema::instance();

  // participant slices over the sorted visit rows
  std::vector<std::pair<std::string, ParticipantRows>> slices;
  for (std::size_t i = 0; i < cohort.visits.size();) {
    std::size_t j = i;
    while (j < cohort.visits.size() && cohort.visits[j].participant_id == cohort.visits[i].participant_id) ++j;
    slices.push_back({cohort.visits[i].participant_id, {i, j}});
    i = j;
  }

  for (const auto& [pid, rows] : slices) {
    const StaticRecord* st = cohort.find_static(pid);

    // anchor candidates: months where DX == MCI
    std::vector<double> anchor_months;
    for (std::size_t i = rows.begin; i < rows.end; ++i) {
      const auto& v = cohort.visits[i];
      if (v.variable == vocab::kDx && v.value == vocab::kDxMci) anchor_months.push_back(v.visit_month);
    }

    // CDR-SB observations, for outcome search
    std::vector<std::pair<double, double>> cdrsb;  // (month, value)
    for (std::size_t i = rows.begin; i < rows.end; ++i) {
      const auto& v = cohort.visits[i];
      if (v.variable == vocab::kCdrsb) cdrsb.push_back({v.visit_month, v.value});
    }

    for (double a : anchor_months) {
      ++result.report.n_mci_visits;

      const auto anchor_cdrsb = value_at(cohort.visits, rows, vocab::kCdrsb, a);
      if (!anchor_cdrsb) {
        ++result.report.excluded_no_anchor_cdrsb;
        continue;
      }

      // outcome: CDR-SB visit in [a+lo, a+hi] closest to a+horizon; earlier
      // visit on ties
      std::optional<std::pair<double, double>> outcome;
      for (const auto& [m, val] : cdrsb) {
        if (m < a + window_lo || m > a + window_hi) continue;
        if (!outcome || std::fabs(m - (a + horizon)) < std::fabs(outcome->first - (a + horizon))) outcome = {m, val};
      }
      if (!outcome) {
        ++result.report.excluded_no_outcome_in_window;
        continue;
      }

      AnchorSample s;
      s.participant_id = pid;
      s.anchor_month = a;
      s.gap_months = outcome->first - a;
      s.y = outcome->second - *anchor_cdrsb;

      // covariates
      s.x.assign(schema.columns.size(), kNaN);
      auto set = [&](const char* name, double v) { s.x[static_cast<std::size_t>(schema.index_of(name))] = v; };

      auto put_last = [&](const char* value_col, const char* miss_col, int variable) {
        const auto obs = last_at_or_before(cohort.visits, rows, variable, a);
        set(miss_col, obs ? 0.0 : 1.0);
        if (obs) set(value_col, obs->second);
      };
      put_last("cdrsb_anchor", "miss_cdrsb", vocab::kCdrsb);
      put_last("mmse_anchor", "miss_mmse", vocab::kMmse);
      put_last("adas13_anchor", "miss_adas13", vocab::kAdas13);
      put_last("faq_anchor", "miss_faq", vocab::kFaq);
      put_last("last_wholebrain", "miss_wholebrain", vocab::kWholeBrain);
      put_last("last_ventricles", "miss_ventricles", vocab::kVentricles);
      put_last("last_hippocampus", "miss_hippocampus", vocab::kHippocampus);
      put_last("last_entorhinal", "miss_entorhinal", vocab::kEntorhinal);
      put_last("last_fusiform", "miss_fusiform", vocab::kFusiform);
      put_last("last_midtemp", "miss_midtemp", vocab::kMidTemp);
      put_last("last_inftemp", "miss_inftemp", vocab::kInfTemp);
      put_last("last_abeta", "miss_abeta", vocab::kAbeta);
      put_last("last_tau", "miss_tau", vocab::kTau);
      put_last("last_ptau", "miss_ptau", vocab::kPtau);

      set("age_at_anchor", st->age + a / 12.0);
      set("sex", st->sex);
      set("education", st->education);
      set("apoe4", st->apoe4);
      set("months_from_first_visit", a);
      set("target_gap_months", s.gap_months);

      double last_mri = -1.0, last_csf = -1.0;
      for (std::size_t i = rows.begin; i < rows.end; ++i) {
        const auto& v = cohort.visits[i];
        if (v.visit_month > a) break;
        if (vocab::is_mri(v.variable)) last_mri = std::max(last_mri, v.visit_month);
        if (vocab::is_csf(v.variable)) last_csf = std::max(last_csf, v.visit_month);
      }
      set("mri_recency_months", last_mri >= 0.0 ? a - last_mri : kRecencySentinel);
      set("csf_recency_months", last_csf >= 0.0 ? a - last_csf : kRecencySentinel);

      // history: every observation at or before the anchor, most recent
      // m_max kept
      for (std::size_t i = rows.begin; i < rows.end; ++i) {
        const auto& v = cohort.visits[i];
        if (v.visit_month > a) break;
        s.history.triplets.push_back({v.visit_month - a, v.variable, v.value});
      }
      if (static_cast<int>(s.history.triplets.size()) > m_max)
        s.history.triplets.erase(s.history.triplets.begin(),
                                 s.history.triplets.end() - static_cast<std::ptrdiff_t>(m_max));
      if (s.history.triplets.empty()) s.history.triplets.push_back({0.0, vocab::kAnchor, 0.0});

      result.samples.push_back(std::move(s));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// cohort summary
// ---------------------------------------------------------------------------

CohortSummary summarize_cohort(const std::vector<AnchorSample>& anchors, const CohortTable& cohort) {
  CohortSummary sum;
  sum.n_anchors = static_cast<long>(anchors.size());
  sum.n_rows = static_cast<long>(cohort.visits.size());

  std::set<std::string> pids;
  for (const auto& a : anchors) pids.insert(a.participant_id);
  sum.n_participants = static_cast<long>(pids.size());

  if (anchors.empty()) {
    sum.median_gap_months = kNaN;
    sum.same_visit_mri_pct = sum.any_prior_mri_pct = sum.same_visit_csf_pct = sum.any_prior_csf_pct = kNaN;
    return sum;
  }

  std::vector<double> gaps;
  for (const auto& a : anchors) gaps.push_back(a.gap_months);
  std::sort(gaps.begin(), gaps.end());
  const std::size_t n = gaps.size();
  sum.median_gap_months = n % 2 ? gaps[n / 2] : 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]);

  long same_mri = 0, any_mri = 0, same_csf = 0, any_csf = 0;
  for (const auto& a : anchors) {
    bool sm = false, am = false, sc = false, ac = false;
    for (const auto& t : a.history.triplets) {
      if (vocab::is_mri(t.k)) {
        am = true;
        if (t.tau == 0.0) sm = true;
      }
      if (vocab::is_csf(t.k)) {
        ac = true;
        if (t.tau == 0.0) sc = true;
      }
    }
    same_mri += sm;
    any_mri += am;
    same_csf += sc;
    any_csf += ac;
  }
  const double dn = static_cast<double>(anchors.size());
  sum.same_visit_mri_pct = 100.0 * static_cast<double>(same_mri) / dn;
  sum.any_prior_mri_pct = 100.0 * static_cast<double>(any_mri) / dn;
  sum.same_visit_csf_pct = 100.0 * static_cast<double>(same_csf) / dn;
  sum.any_prior_csf_pct = 100.0 * static_cast<double>(any_csf) / dn;
  return sum;
}

// ---------------------------------------------------------------------------
// synthetic cohort
// ---------------------------------------------------------------------------

void SyntheticConfig::validate() const {
  if (n_participants <= 0) throw CohortError("SyntheticConfig: n_participants must be > 0");
  auto prob = [](double p, const char* what) {
    if (p < 0.0 || p > 1.0) throw CohortError(std::string("SyntheticConfig: ") + what + " must be in [0,1]");
  };
  prob(dropout_per_visit, "dropout_per_visit");
  prob(p_mri, "p_mri");
  prob(p_csf, "p_csf");
  prob(mri_revisit, "mri_revisit");
  prob(csf_revisit, "csf_revisit");
  if (residual_decay_per_month < 0.0) throw CohortError("SyntheticConfig: residual_decay_per_month must be >= 0");
  if (visit_spacing_mean <= 0.0) throw CohortError("SyntheticConfig: visit_spacing_mean must be > 0");
  if (max_visits < 1) throw CohortError("SyntheticConfig: max_visits must be >= 1");
}

namespace {

// Exponentially time-decayed slope of the observed (month, value) series at
// time `now`: weighted mean of consecutive-pair slopes, weight exp(-rho * age
// of the later observation).
double decayed_slope(const std::vector<std::pair<double, double>>& obs, double now, double rho) {
  if (obs.size() < 2) return 0.0;
  double wsum = 0.0, ssum = 0.0;
  for (std::size_t j = 1; j < obs.size(); ++j) {
    const double dt = obs[j].first - obs[j - 1].first;
    if (dt <= 0.0) continue;
    const double slope = (obs[j].second - obs[j - 1].second) / dt;
    const double w = std::exp(-rho * (now - obs[j].first));
    wsum += w;
    ssum += w * slope;
  }
  return wsum > 0.0 ? ssum / wsum : 0.0;
}

}  // namespace

CohortTable generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();

  std::vector<VisitRecord> visits;
  std::vector<StaticRecord> statics;

  // MRI baseline scales per variable id (native-unit flavor, exercises
  // standardization)
  const std::array<std::pair<double, double>, 7> mri_base = {{{1050000.0, 90000.0},
                                                              {38000.0, 11000.0},
                                                              {6800.0, 700.0},
                                                              {3600.0, 500.0},
                                                              {17000.0, 1600.0},
                                                              {19500.0, 1900.0},
                                                              {18500.0, 1800.0}}};

  for (int i = 0; i < cfg.n_participants; ++i) {
    std::mt19937_64 g(rng::substream(cfg.seed, static_cast<std::uint64_t>(i)));

    char buf[16];
    std::snprintf(buf, sizeof(buf), "P%05d", i + 1);
    StaticRecord st;
    st.participant_id = buf;
    st.age = rng::uniform(g, 60.0, 85.0);
    st.sex = rng::bernoulli(g, 0.45) ? 1 : 0;
    st.education = std::floor(rng::uniform(g, 8.0, 20.0));
    {
      const double u = rng::uniform01(g);
      st.apoe4 = u < 0.55 ? 0 : (u < 0.90 ? 1 : 2);
    }
    statics.push_back(st);

    // per-month progression rate: affine in static covariates plus a
    // participant-level random effect (the LMM's random intercept once
    // multiplied by the target gap)
    const double rate = 0.020 + 0.012 * st.apoe4 + 0.010 * (st.age - 72.0) / 10.0 - 0.004 * (st.education - 14.0) / 4.0 +
                        rng::gaussian(g, 0.0, 0.012);

    double cdrsb = std::clamp(rng::gaussian(g, 2.0, 1.0), 0.25, 6.0);
    double adas = rng::gaussian(g, 18.0, 5.0);
    double adas_slope = rng::gaussian(g, 0.08, 0.05);

    const bool has_mri = rng::bernoulli(g, cfg.p_mri);
    const bool has_csf = rng::bernoulli(g, cfg.p_csf);
    std::array<double, 7> mri_v{};
    for (std::size_t k = 0; k < mri_v.size(); ++k) mri_v[k] = rng::gaussian(g, mri_base[k].first, mri_base[k].second);
    double abeta = rng::gaussian(g, 800.0, 180.0);
    double tau = rng::gaussian(g, 250.0, 70.0);
    double ptau = rng::gaussian(g, 25.0, 7.0);

    std::vector<std::pair<double, double>> adas_obs;  // observed (month, value)

    double t = 0.0;
    for (int visit = 0; visit < cfg.max_visits; ++visit) {
      auto emit = [&](int var, double val) { visits.push_back({st.participant_id, t, var, val, 0}); };

      const double dx = cdrsb < 0.75 ? vocab::kDxCn : (cdrsb < 4.5 ? vocab::kDxMci : vocab::kDxAd);
      emit(vocab::kDx, dx);
      emit(vocab::kCdrsb, cdrsb);

      const double adas_noisy = adas + rng::gaussian(g, 0.0, cfg.noise.clinical);
      emit(vocab::kAdas13, adas_noisy);
      adas_obs.push_back({t, adas_noisy});

      emit(vocab::kMmse, std::clamp(29.5 - 0.55 * cdrsb - 0.12 * (adas - 18.0) + rng::gaussian(g, 0.0, 0.6 * cfg.noise.clinical),
                                    0.0, 30.0));
      if (!rng::bernoulli(g, 0.1))
        emit(vocab::kFaq, std::clamp(1.2 * cdrsb + 0.08 * (adas - 18.0) + rng::gaussian(g, 0.0, cfg.noise.clinical), 0.0, 30.0));

      if (has_mri && (visit == 0 || rng::bernoulli(g, cfg.mri_revisit))) {
        const double atrophy = 1.0 - 0.0008 * t * (1.0 + cdrsb / 6.0);
        for (int k = 0; k < 7; ++k) {
          const double sign = (k == 1) ? 2.0 - atrophy : atrophy;  // ventricles grow
          emit(vocab::kWholeBrain + k, mri_v[static_cast<std::size_t>(k)] * sign *
                                           (1.0 + rng::gaussian(g, 0.0, cfg.noise.mri)));
        }
      }
      if (has_csf && (visit == 0 || rng::bernoulli(g, cfg.csf_revisit))) {
        emit(vocab::kAbeta, (abeta - 1.2 * t) * (1.0 + rng::gaussian(g, 0.0, cfg.noise.csf)));
        emit(vocab::kTau, (tau + 0.6 * t) * (1.0 + rng::gaussian(g, 0.0, cfg.noise.csf)));
        emit(vocab::kPtau, (ptau + 0.07 * t) * (1.0 + rng::gaussian(g, 0.0, cfg.noise.csf)));
      }

      if (visit + 1 >= cfg.max_visits) break;
      if (rng::bernoulli(g, cfg.dropout_per_visit)) break;

      const double dt = std::max(1.0, cfg.visit_spacing_mean + rng::uniform(g, -cfg.visit_spacing_jitter, cfg.visit_spacing_jitter));

      // planted residual signal: the CDR-SB trend picks up the decayed
      // recent slope of *observed* ADAS13, visible to history readers
      const double signal = decayed_slope(adas_obs, t, cfg.residual_decay_per_month);
      cdrsb = std::clamp(cdrsb + dt * (rate + cfg.residual_strength * signal) + rng::gaussian(g, 0.0, cfg.noise.cdrsb * std::sqrt(dt)),
                         0.0, 18.0);

      adas_slope = 0.9 * adas_slope + rng::gaussian(g, 0.008, 0.02);
      adas += dt * adas_slope;
      t += dt;
    }
  }

  return ingest_records(std::move(visits), std::move(statics));
}

// ---------------------------------------------------------------------------
// file output
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

void open_or_throw(std::ofstream& f, const std::string& path) {
  f.open(path);
  if (!f) throw CohortError("cannot open output file: " + path);
}

}  // namespace

void write_visits_csv(const std::string& path, const CohortTable& cohort, const std::string& provenance) {
  std::ofstream f;
  open_or_throw(f, path);
  if (!provenance.empty()) f << "# " << provenance << "\n";
  f << "participant_id,visit_month,variable,value\n";
  for (const auto& v : cohort.visits)
    f << v.participant_id << ',' << fmt_double(v.visit_month) << ',' << vocab::name_of(v.variable) << ',' << fmt_double(v.value)
      << '\n';
}

void write_static_csv(const std::string& path, const CohortTable& cohort, const std::string& provenance) {
  std::ofstream f;
  open_or_throw(f, path);
  if (!provenance.empty()) f << "# " << provenance << "\n";
  f << "participant_id,age,sex,education,apoe4\n";
  for (const auto& s : cohort.statics)
    f << s.participant_id << ',' << fmt_double(s.age) << ',' << s.sex << ',' << fmt_double(s.education) << ',' << s.apoe4 << '\n';
}

void write_anchors_jsonl(const std::string& path, const std::vector<AnchorSample>& anchors, const std::string& provenance) {
  std::ofstream f;
  open_or_throw(f, path);
  if (!provenance.empty()) f << nlohmann::json{{"_header", provenance}}.dump() << "\n";
  const CovariateSchema& schema = CovariateSchema::instance();
  for (const auto& a : anchors) {
    nlohmann::json x;
    for (std::size_t i = 0; i < schema.columns.size(); ++i) x[schema.columns[i]] = finite_or_null(a.x[i]);
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& t : a.history.triplets) hist.push_back({t.tau, t.k, t.v});
    nlohmann::json j{{"participant_id", a.participant_id}, {"anchor_month", a.anchor_month}, {"x", std::move(x)},
                     {"history", std::move(hist)},         {"y", a.y},                      {"gap_months", a.gap_months}};
    f << j.dump() << "\n";
  }
}

void write_summary_json(const std::string& path, const CohortSummary& s, const AnchorBuildReport& r, const std::string& provenance) {
  std::ofstream f;
  open_or_throw(f, path);
  nlohmann::json j{{"provenance", provenance},
                   {"n_anchors", s.n_anchors},
                   {"n_participants", s.n_participants},
                   {"n_rows", s.n_rows},
                   {"median_gap_months", finite_or_null(s.median_gap_months)},
                   {"same_visit_mri_pct", finite_or_null(s.same_visit_mri_pct)},
                   {"any_prior_mri_pct", finite_or_null(s.any_prior_mri_pct)},
                   {"same_visit_csf_pct", finite_or_null(s.same_visit_csf_pct)},
                   {"any_prior_csf_pct", finite_or_null(s.any_prior_csf_pct)},
                   {"exclusions",
                    {{"mci_visits", r.n_mci_visits},
                     {"no_anchor_cdrsb", r.excluded_no_anchor_cdrsb},
                     {"no_outcome_in_window", r.excluded_no_outcome_in_window}}}};
  f << j.dump(2) << "\n";
}

}  // namespace gapstride
