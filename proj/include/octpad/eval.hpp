#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "octpad/cnn.hpp"
#include "octpad/image.hpp"
#include "octpad/patches.hpp"
#include "octpad/preprocess.hpp"

namespace octpad {

struct ScoreRecord {
  std::string scan_id;
  Label label = Label::Bonafide;
  std::optional<std::string> material;
  std::vector<double> patch_scores;
  int n_patches = 0;
  double global_score = 0.0;
};

// Score given to a scan that yields no patches: it is rejected, which for a
// bonafide scan counts as a false detection.
inline constexpr double kUnscorableScore = 1.0;

// Arithmetic mean. Throws on an empty list ("no patches scored").
double global_score(std::span<const double> patch_scores);

struct RocPoint {
  double tau = 0.0;  // +infinity for the reject-nothing sentinel
  double fdr = 0.0;
  double tdr = 0.0;
};

// Decision rule: score >= tau means PA. Points are ordered by tau descending,
// starting at the +infinity sentinel (0, 0) and visiting every distinct score.
struct RocCurve {
  std::vector<RocPoint> points;
};

RocCurve roc(const std::vector<ScoreRecord>& records);

struct OperatingPoint {
  double tdr = 0.0;
  double fdr = 0.0;
  double tau = 0.0;
};

// Highest TDR among thresholds with FDR <= fdr_max; ties go to the largest tau.
OperatingPoint tdr_at_fdr(const std::vector<ScoreRecord>& records, double fdr_max);
OperatingPoint tdr_at_fdr(const RocCurve& curve, double fdr_max);

struct FoldPlan {
  int k = 5;
  std::map<std::string, int> assignments;  // scan_id -> fold

  std::vector<std::string> members(int fold) const;
};

// Stratified by (label, material): each stratum is shuffled and dealt
// round-robin, with the dealing position carried across the strata of a label
// so per-label fold sizes also stay within one of each other.
FoldPlan kfold_split(const std::vector<ScanRecord>& records, int k, std::uint64_t seed);

// preprocess -> patches -> spoofness -> global score for each scan. Scans
// that fail segmentation or yield no candidates are marked unscorable.
std::vector<ScoreRecord> score_scans(const CnnModel& model, const std::vector<ScanRecord>& records,
                                     const PreprocessConfig& pp, const PatchConfig& pc);

// A loaded scan and its selected candidates; `selected` is empty when the
// scan cannot be segmented or yields no candidates.
struct PreparedScan {
  BScan scan;
  std::vector<Candidate> selected;
};

// Loads and segments every scan (in parallel).
std::vector<PreparedScan> prepare_scans(const std::vector<ScanRecord>& records, const PreprocessConfig& pp,
                                        const PatchConfig& pc);

// Up to per_scan candidates drawn without replacement (0 = all), kept in
// selection order.
std::vector<Candidate> subsample_candidates(const std::vector<Candidate>& selected, int per_scan, std::uint64_t seed);

// Trains the reference architecture on up to per_scan patches of each scan.
TrainResult train_on_scans(const std::vector<PreparedScan>& scans, const PatchConfig& pc, const TrainConfig& tc,
                           int per_scan, std::uint64_t sample_seed, const EpochCallback& on_epoch = {});

// scan_id,label,material,n_patches,global_score
void write_scores_csv(const std::vector<ScoreRecord>& records, const std::filesystem::path& path);
std::vector<ScoreRecord> read_scores_csv(const std::filesystem::path& path);
// tau,fdr,tdr
void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path);

// Log-FDR ROC plot: one thin line per curve, their mean, and a shaded
// +/- one standard deviation band.
void write_roc_svg(const std::vector<RocCurve>& curves, const std::filesystem::path& path);

double mean(std::span<const double> v);
// Population standard deviation.
double stddev(std::span<const double> v);

struct CrossValConfig {
  int k = 5;
  double fdr_max = 0.002;
  std::uint64_t seed = 7;
  int train_patches_per_scan = 4;  // random subset of each training scan's patches; 0 = all
};

struct FoldResult {
  int fold = 0;
  int train_bonafide = 0;
  int train_pa = 0;
  int test_bonafide = 0;
  int test_pa = 0;
  OperatingPoint operating_point;
  RocCurve curve;
  std::vector<ScoreRecord> scores;
  std::vector<EpochStats> history;
};

struct CrossValResult {
  std::vector<FoldResult> folds;
  double mean_tdr = 0.0;
  double sd_tdr = 0.0;
};

using ProgressCallback = std::function<void(const std::string&)>;

// Trains on k-1 folds and scores the held-out fold, for every fold. Every
// scan is segmented once up front. When out_dir is non-empty it receives
// scores.csv, scores_fold<i>.csv, roc_fold<i>.csv, roc.svg and summary.json.
CrossValResult cross_validate(const std::vector<ScanRecord>& records, const PreprocessConfig& pp,
                              const PatchConfig& pc, const TrainConfig& tc, const CrossValConfig& cv,
                              const std::filesystem::path& out_dir = {}, const ProgressCallback& progress = {});

void write_crossval_outputs(const CrossValResult& result, const CrossValConfig& cv, const std::filesystem::path& out_dir);

}  // namespace octpad
