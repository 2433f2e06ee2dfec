#include "octpad/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "octpad/error.hpp"
#include "octpad/parallel.hpp"
#include "octpad/random.hpp"

namespace octpad {

namespace fs = std::filesystem;

double global_score(std::span<const double> patch_scores) {
  if (patch_scores.empty()) fail(ErrorKind::Data, "no patches scored");
  double sum = 0.0;
  for (double s : patch_scores) sum += s;
  return sum / static_cast<double>(patch_scores.size());
}

namespace {

void require_both_labels(const std::vector<ScoreRecord>& records) {
  const bool bonafide = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.label == Label::Bonafide; });
  const bool pa = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.label == Label::PA; });
  if (!bonafide || !pa) fail(ErrorKind::Data, "ROC needs at least one bonafide and one PA score");
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail(ErrorKind::Format, "bad number \"" + s + "\"");
  return v;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

RocCurve roc(const std::vector<ScoreRecord>& records) {
  require_both_labels(records);
  std::vector<double> pa;
  std::vector<double> bf;
  for (const auto& r : records) (r.label == Label::PA ? pa : bf).push_back(r.global_score);
  std::sort(pa.begin(), pa.end(), std::greater<>());
  std::sort(bf.begin(), bf.end(), std::greater<>());

  std::vector<double> taus;
  taus.reserve(records.size());
  for (const auto& r : records) taus.push_back(r.global_score);
  std::sort(taus.begin(), taus.end(), std::greater<>());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());

  RocCurve curve;
  curve.points.push_back(RocPoint{std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t n_pa = 0;
  std::size_t n_bf = 0;
  for (double tau : taus) {
    while (n_pa < pa.size() && pa[n_pa] >= tau) ++n_pa;
    while (n_bf < bf.size() && bf[n_bf] >= tau) ++n_bf;
    curve.points.push_back(RocPoint{tau, static_cast<double>(n_bf) / static_cast<double>(bf.size()),
                                    static_cast<double>(n_pa) / static_cast<double>(pa.size())});
  }
  return curve;
}

OperatingPoint tdr_at_fdr(const RocCurve& curve, double fdr_max) {
  OperatingPoint best{-1.0, 0.0, 0.0};
  // Points run from the largest tau down, so strict improvement keeps the
  // largest tau among equal TDRs.
  for (const auto& p : curve.points) {
    if (p.fdr <= fdr_max && p.tdr > best.tdr) best = OperatingPoint{p.tdr, p.fdr, p.tau};
  }
  return best;
}

OperatingPoint tdr_at_fdr(const std::vector<ScoreRecord>& records, double fdr_max) {
  if (!(fdr_max >= 0.0 && fdr_max <= 1.0)) fail(ErrorKind::InvalidArgument, "fdr_max must be in [0, 1]");
  return tdr_at_fdr(roc(records), fdr_max);
}

std::vector<std::string> FoldPlan::members(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignments)
    if (f == fold) out.push_back(id);
  return out;
}

FoldPlan kfold_split(const std::vector<ScanRecord>& records, int k, std::uint64_t seed) {
  if (k < 2) fail(ErrorKind::InvalidArgument, "k must be >= 2");
  const auto n_bonafide = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.label == Label::Bonafide; });
  if (k > n_bonafide) fail(ErrorKind::Data, "k exceeds the number of bonafide scans");

  // (label, material) -> scan ids in manifest order; std::map gives a stable
  // stratum order.
  std::map<std::pair<int, std::string>, std::vector<std::string>> strata;
  for (const auto& r : records) {
    const std::string material = r.material.value_or("");
    strata[{r.label == Label::PA ? 1 : 0, material}].push_back(r.scan_id);
  }

  FoldPlan plan;
  plan.k = k;
  std::map<int, int> next_fold;  // per label
  for (auto& [key, ids] : strata) {
    std::uint64_t stream = static_cast<std::uint64_t>(key.first) + 1;
    for (unsigned char ch : key.second) stream = stream * 131 + ch;
    Rng(mix_seed(seed, stream)).shuffle(ids.begin(), ids.end());
    int& pos = next_fold[key.first];
    for (const auto& id : ids) {
      plan.assignments[id] = pos;
      pos = (pos + 1) % k;
    }
  }
  return plan;
}

std::vector<ScoreRecord> score_scans(const CnnModel& model, const std::vector<ScanRecord>& records,
                                     const PreprocessConfig& pp, const PatchConfig& pc) {
  std::vector<ScoreRecord> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ScanRecord& rec = records[i];
    ScoreRecord& sr = out[i];
    sr.scan_id = rec.scan_id;
    sr.label = rec.label;
    sr.material = rec.material;
    const BScan scan = load_scan(rec);
    std::vector<Patch> patches;
    try {
      patches = patches_for_scan(scan, preprocess_pipeline(scan, pp), pc);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Data) throw;
    }
    sr.patch_scores = spoofness_batch(model, patches);
    sr.n_patches = static_cast<int>(sr.patch_scores.size());
    sr.global_score = sr.patch_scores.empty() ? kUnscorableScore : global_score(sr.patch_scores);
  }
  return out;
}

void write_scores_csv(const std::vector<ScoreRecord>& records, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "scan_id,label,material,n_patches,global_score\n";
  for (const auto& r : records) {
    out << csv_field(r.scan_id) << ',' << to_string(r.label) << ',' << csv_field(r.material.value_or("")) << ','
        << r.n_patches << ',' << format_double(r.global_score) << '\n';
  }
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
}

std::vector<ScoreRecord> read_scores_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"scan_id", "label", "material", "n_patches", "global_score"})
    fail(ErrorKind::Format, "scores CSV must start with scan_id,label,material,n_patches,global_score");
  std::vector<ScoreRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) fail(ErrorKind::Format, path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    ScoreRecord r;
    r.scan_id = f[0];
    r.label = parse_label(f[1]);
    if (!f[2].empty()) r.material = f[2];
    r.n_patches = static_cast<int>(parse_double(f[3]));
    r.global_score = parse_double(f[4]);
    records.push_back(std::move(r));
  }
  return records;
}

void write_roc_csv(const RocCurve& curve, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "tau,fdr,tdr\n";
  for (const auto& p : curve.points) out << format_double(p.tau) << ',' << format_double(p.fdr) << ',' << format_double(p.tdr) << '\n';
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

namespace {

// Best TDR reachable with FDR <= f.
double tdr_step(const RocCurve& curve, double f) {
  double best = 0.0;
  for (const auto& p : curve.points)
    if (p.fdr <= f) best = std::max(best, p.tdr);
  return best;
}

}  // namespace

void write_roc_svg(const std::vector<RocCurve>& curves, const fs::path& path) {
  constexpr double kW = 640, kH = 480, kLeft = 70, kRight = 20, kTop = 30, kBottom = 60;
  constexpr double kMinLog = -3.0;  // FDR axis spans 1e-3 .. 1
  constexpr int kGrid = 200;
  const double pw = kW - kLeft - kRight;
  const double ph = kH - kTop - kBottom;
  auto x_of = [&](double fdr) {
    const double lf = fdr <= 0.0 ? kMinLog : std::max(kMinLog, std::log10(fdr));
    return kLeft + pw * (lf - kMinLog) / -kMinLog;
  };
  auto y_of = [&](double tdr) { return kTop + ph * (1.0 - tdr); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };

  std::vector<double> grid(kGrid);
  for (int i = 0; i < kGrid; ++i) grid[i] = std::pow(10.0, kMinLog * (1.0 - static_cast<double>(i) / (kGrid - 1)));
  std::vector<double> mu(kGrid), sd(kGrid);
  for (int i = 0; i < kGrid; ++i) {
    std::vector<double> vals;
    for (const auto& c : curves) vals.push_back(tdr_step(c, grid[i]));
    mu[i] = mean(vals);
    sd[i] = stddev(vals);
  }

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // +/- one standard deviation band
  s << "<polygon fill=\"#cccccc\" fill-opacity=\"0.7\" stroke=\"none\" points=\"";
  for (int i = 0; i < kGrid; ++i) s << num(x_of(grid[i])) << ',' << num(y_of(std::min(1.0, mu[i] + sd[i]))) << ' ';
  for (int i = kGrid - 1; i >= 0; --i) s << num(x_of(grid[i])) << ',' << num(y_of(std::max(0.0, mu[i] - sd[i]))) << ' ';
  s << "\"/>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    s << "<polyline fill=\"none\" stroke=\"#4477aa\" stroke-width=\"1\" stroke-opacity=\"0.6\" points=\"";
    for (int i = 0; i < kGrid; ++i) s << num(x_of(grid[i])) << ',' << num(y_of(tdr_step(curves[c], grid[i]))) << ' ';
    s << "\"/>\n";
  }
  s << "<polyline fill=\"none\" stroke=\"#cc0000\" stroke-width=\"2\" points=\"";
  for (int i = 0; i < kGrid; ++i) s << num(x_of(grid[i])) << ',' << num(y_of(mu[i])) << ' ';
  s << "\"/>\n";
  // axes
  s << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int e = 0; e >= -3; --e) {
    const double x = x_of(std::pow(10.0, e));
    s << "<text x=\"" << num(x) << "\" y=\"" << num(kTop + ph + 18) << "\" text-anchor=\"middle\">1e" << e << "</text>\n";
  }
  for (int t = 0; t <= 10; t += 2) {
    const double y = y_of(t / 10.0);
    s << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << num(t / 10.0) << "</text>\n";
  }
  s << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kH - 15) << "\" text-anchor=\"middle\">False Detection Rate</text>\n";
  s << "<text x=\"18\" y=\"" << num(kTop + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << num(kTop + ph / 2)
    << ")\">True Detection Rate</text>\n";
  s << "</svg>\n";

  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << s.str();
}

std::vector<PreparedScan> prepare_scans(const std::vector<ScanRecord>& records, const PreprocessConfig& pp,
                                        const PatchConfig& pc) {
  pp.validate();
  pc.validate();
  std::vector<PreparedScan> prepared(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    prepared[i].scan = load_scan(records[i]);
    try {
      const BinaryMask mask = preprocess_pipeline(prepared[i].scan, pp);
      prepared[i].selected = select_candidates(find_candidates(mask, pc), pc.max_patches);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Data) throw;
    }
  });
  return prepared;
}

std::vector<Candidate> subsample_candidates(const std::vector<Candidate>& selected, int per_scan, std::uint64_t seed) {
  if (per_scan < 0) fail(ErrorKind::InvalidArgument, "patches per scan must be >= 0");
  const auto n = static_cast<std::size_t>(per_scan);
  if (n == 0 || selected.size() <= n) return selected;
  std::vector<std::size_t> idx(selected.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng(seed).shuffle(idx.begin(), idx.end());
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<Candidate> out;
  for (std::size_t k : idx) out.push_back(selected[k]);
  return out;
}

namespace {

std::vector<LabeledPatch> sample_training_patches(const std::vector<PreparedScan>& scans,
                                                  const std::vector<std::size_t>& members, const PatchConfig& pc,
                                                  int per_scan, std::uint64_t sample_seed) {
  std::vector<LabeledPatch> out;
  for (std::size_t i : members) {
    const auto chosen = subsample_candidates(scans[i].selected, per_scan, mix_seed(sample_seed, i));
    for (auto& p : extract_patches(scans[i].scan, chosen, pc))
      out.push_back(LabeledPatch{std::move(p.pixels), scans[i].scan.label});
  }
  return out;
}

}  // namespace

TrainResult train_on_scans(const std::vector<PreparedScan>& scans, const PatchConfig& pc, const TrainConfig& tc,
                           int per_scan, std::uint64_t sample_seed, const EpochCallback& on_epoch) {
  std::vector<std::size_t> all(scans.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return train(sample_training_patches(scans, all, pc, per_scan, sample_seed), tc,
               reference_architecture(pc.patch_h, pc.patch_w), on_epoch);
}

CrossValResult cross_validate(const std::vector<ScanRecord>& records, const PreprocessConfig& pp,
                              const PatchConfig& pc, const TrainConfig& tc, const CrossValConfig& cv,
                              const fs::path& out_dir, const ProgressCallback& progress) {
  tc.validate();
  if (!(cv.fdr_max >= 0.0 && cv.fdr_max <= 1.0)) fail(ErrorKind::InvalidArgument, "fdr_max must be in [0, 1]");
  if (cv.train_patches_per_scan < 0) fail(ErrorKind::InvalidArgument, "train_patches_per_scan must be >= 0");
  const FoldPlan plan = kfold_split(records, cv.k, cv.seed);
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };

  say("segmenting " + std::to_string(records.size()) + " scans");
  const std::vector<PreparedScan> prepared = prepare_scans(records, pp, pc);

  CrossValResult result;
  for (int f = 0; f < cv.k; ++f) {
    FoldResult fold;
    fold.fold = f;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const bool is_pa = records[i].label == Label::PA;
      if (plan.assignments.at(records[i].scan_id) == f) {
        test_idx.push_back(i);
        ++(is_pa ? fold.test_pa : fold.test_bonafide);
      } else {
        train_idx.push_back(i);
        ++(is_pa ? fold.train_pa : fold.train_bonafide);
      }
    }
    std::vector<LabeledPatch> train_set = sample_training_patches(
        prepared, train_idx, pc, cv.train_patches_per_scan, mix_seed(cv.seed, static_cast<std::uint64_t>(f)));

    say("fold " + std::to_string(f + 1) + "/" + std::to_string(cv.k) + ": training on " +
        std::to_string(train_set.size()) + " patches");
    TrainConfig fold_cfg = tc;
    fold_cfg.seed = mix_seed(tc.seed, static_cast<std::uint64_t>(f));
    TrainResult trained = train(train_set, fold_cfg, reference_architecture(pc.patch_h, pc.patch_w),
                                [&](const EpochStats& s) {
                                  char line[96];
                                  std::snprintf(line, sizeof line, "  epoch %d loss %.6f acc %.4f", s.epoch,
                                                s.train_loss, s.train_accuracy);
                                  say(line);
                                });
    train_set.clear();
    fold.history = trained.history;

    say("fold " + std::to_string(f + 1) + ": scoring " + std::to_string(test_idx.size()) + " scans");
    for (std::size_t i : test_idx) {
      ScoreRecord sr;
      sr.scan_id = records[i].scan_id;
      sr.label = records[i].label;
      sr.material = records[i].material;
      if (!prepared[i].selected.empty()) {
        sr.patch_scores = spoofness_batch(trained.model, extract_patches(prepared[i].scan, prepared[i].selected, pc));
      }
      sr.n_patches = static_cast<int>(sr.patch_scores.size());
      sr.global_score = sr.patch_scores.empty() ? kUnscorableScore : global_score(sr.patch_scores);
      fold.scores.push_back(std::move(sr));
    }
    fold.curve = roc(fold.scores);
    fold.operating_point = tdr_at_fdr(fold.curve, cv.fdr_max);
    say("fold " + std::to_string(f + 1) + ": TDR " + format_double(fold.operating_point.tdr) + " @ FDR <= " +
        format_double(cv.fdr_max));
    result.folds.push_back(std::move(fold));
  }

  std::vector<double> tdrs;
  for (const auto& fr : result.folds) tdrs.push_back(fr.operating_point.tdr);
  result.mean_tdr = mean(tdrs);
  result.sd_tdr = stddev(tdrs);
  if (!out_dir.empty()) write_crossval_outputs(result, cv, out_dir);
  return result;
}

void write_crossval_outputs(const CrossValResult& result, const CrossValConfig& cv, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) fail(ErrorKind::Io, "cannot create output directory " + out_dir.string());

  std::vector<ScoreRecord> all;
  std::vector<RocCurve> curves;
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& fr : result.folds) {
    const std::string tag = std::to_string(fr.fold + 1);
    write_scores_csv(fr.scores, out_dir / ("scores_fold" + tag + ".csv"));
    write_roc_csv(fr.curve, out_dir / ("roc_fold" + tag + ".csv"));
    all.insert(all.end(), fr.scores.begin(), fr.scores.end());
    curves.push_back(fr.curve);
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : fr.history)
      history.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"train_accuracy", h.train_accuracy}});
    folds.push_back({{"fold", fr.fold + 1},
                     {"train_bonafide", fr.train_bonafide},
                     {"train_pa", fr.train_pa},
                     {"test_bonafide", fr.test_bonafide},
                     {"test_pa", fr.test_pa},
                     {"tdr", fr.operating_point.tdr},
                     {"fdr", fr.operating_point.fdr},
                     {"tau", std::isinf(fr.operating_point.tau) ? nlohmann::json("inf") : nlohmann::json(fr.operating_point.tau)},
                     {"history", history}});
  }
  write_scores_csv(all, out_dir / "scores.csv");
  write_roc_svg(curves, out_dir / "roc.svg");
  const nlohmann::json summary{{"k", cv.k},
                               {"fdr_max", cv.fdr_max},
                               {"seed", cv.seed},
                               {"folds", folds},
                               {"mean_tdr", result.mean_tdr},
                               {"sd_tdr", result.sd_tdr}};
  std::ofstream out(out_dir / "summary.json");
  if (!out) fail(ErrorKind::Io, "cannot write summary.json");
  out << summary.dump(2) << '\n';
}

}  // namespace octpad
