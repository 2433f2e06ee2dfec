// octpad command-line driver. Talks to the library only through octpad.h.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "octpad/octpad.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

// Carries a library failure out to main.
struct ApiFailure {
  octpad_status status;
  std::string message;
};

void check(octpad_status s) {
  if (s != OCTPAD_OK) throw ApiFailure{s, octpad_last_error()};
}

struct ConfigDeleter {
  void operator()(octpad_config* c) const { octpad_config_free(c); }
};
struct ImageDeleter {
  void operator()(octpad_image* i) const { octpad_image_free(i); }
};
struct ModelDeleter {
  void operator()(octpad_model* m) const { octpad_model_free(m); }
};
using ConfigPtr = std::unique_ptr<octpad_config, ConfigDeleter>;
using ImagePtr = std::unique_ptr<octpad_image, ImageDeleter>;
using ModelPtr = std::unique_ptr<octpad_model, ModelDeleter>;

ImagePtr load_image(const std::string& path) {
  octpad_image* img = nullptr;
  check(octpad_image_load(path.c_str(), &img));
  return ImagePtr(img);
}

ModelPtr load_model(const std::string& path) {
  octpad_model* m = nullptr;
  check(octpad_model_load(path.c_str(), &m));
  return ModelPtr(m);
}

void print_progress(const char* msg, void*) { std::cerr << msg << '\n'; }

// Flag overrides collected during parsing, applied after --config.
class Overrides {
 public:
  explicit Overrides(nlohmann::json defaults) : defaults_(std::move(defaults)) {}

  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto* opt = app->add_option_function<T>(
        flag, [this, key](const T& v) { values_.emplace_back(key, nlohmann::json(v).dump()); }, help);
    return opt->default_str(default_text(key));
  }

  void add_switch(CLI::App* app, const std::string& flag, const std::string& key, bool value, const std::string& help) {
    app->add_flag_callback(flag, [this, key, value] { values_.emplace_back(key, value ? "true" : "false"); }, help);
  }

  void add_list(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::vector<std::string>>(
           flag, [this, key](const std::vector<std::string>& v) { values_.emplace_back(key, nlohmann::json(v).dump()); },
           help)
        ->delimiter(',')
        ->default_str(default_text(key));
  }

  void apply(octpad_config* cfg) const {
    for (const auto& [key, value] : values_) check(octpad_config_set(cfg, key.c_str(), value.c_str()));
  }

 private:
  std::string default_text(const std::string& key) const {
    const nlohmann::json* node = &defaults_;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      node = &node->at(key.substr(start, dot - start));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    if (node->is_array()) {
      std::string out;
      for (const auto& v : *node) out += (out.empty() ? "" : ",") + v.get<std::string>();
      return out;
    }
    return node->dump();
  }

  nlohmann::json defaults_;
  std::vector<std::pair<std::string, std::string>> values_;
};

nlohmann::json default_config_json() {
  octpad_config* raw = nullptr;
  check(octpad_config_new(&raw));
  ConfigPtr cfg(raw);
  std::size_t len = 0;
  check(octpad_config_json(cfg.get(), nullptr, 0, &len));
  std::string text(len + 1, '\0');
  check(octpad_config_json(cfg.get(), text.data(), text.size(), nullptr));
  text.resize(len);
  return nlohmann::json::parse(text);
}

void add_preprocess_flags(CLI::App* app, Overrides& o) {
  o.add<double>(app, "--h", "preprocess.h", "NLM filter strength");
  o.add<int>(app, "--template", "preprocess.template", "NLM template window (odd)");
  o.add<int>(app, "--search", "preprocess.search", "NLM search window (odd)");
  o.add<int>(app, "--dilate", "preprocess.dilate", "dilation kernel");
}

void add_patch_flags(CLI::App* app, Overrides& o) {
  o.add<int>(app, "--stride", "patches.stride", "candidate lattice stride");
  o.add<int>(app, "--window", "patches.window", "candidate window (odd)");
  o.add<int>(app, "--min-count", "patches.min_count", "foreground pixels needed in the window");
  o.add<int>(app, "--patch-h", "patches.patch_h", "patch height");
  o.add<int>(app, "--patch-w", "patches.patch_w", "patch width");
  o.add<int>(app, "--anchor-row", "patches.anchor_row", "candidate row inside the patch");
  o.add<int>(app, "--anchor-col", "patches.anchor_col", "candidate column inside the patch");
  o.add<int>(app, "--max-patches", "patches.max_patches", "patches per scan cap");
}

void add_train_flags(CLI::App* app, Overrides& o) {
  o.add<int>(app, "--epochs", "train.epochs", "training epochs");
  o.add<int>(app, "--batch", "train.batch", "mini-batch size");
  o.add<double>(app, "--lr-start", "train.lr_start", "initial learning rate");
  o.add<double>(app, "--lr-end", "train.lr_end", "final learning rate");
  o.add<double>(app, "--rho", "train.rmsprop_decay", "RMSProp decay");
  o.add<double>(app, "--epsilon", "train.rmsprop_epsilon", "RMSProp epsilon");
  o.add<int>(app, "--patches-per-scan", "train.patches_per_scan", "training patches sampled per scan (0 = all)");
  o.add_switch(app, "--no-augment", "train.augment", false, "disable data augmentation");
  o.add_switch(app, "--eval-each-epoch", "train.evaluate_each_epoch", true, "score the training set after each epoch");
}

// Echoes the resolved config next to the outputs.
void write_provenance(const octpad_config* cfg, const fs::path& dir) {
  const fs::path d = dir.empty() ? fs::path(".") : dir;
  std::error_code ec;
  fs::create_directories(d, ec);
  check(octpad_config_save(cfg, (d / "octpad_config.json").string().c_str()));
}

fs::path parent_of(const std::string& file) { return fs::path(file).parent_path(); }

// Creates the directory an output file will land in.
void make_parent(const std::string& file) {
  const fs::path dir = parent_of(file);
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
}

}  // namespace

int main(int argc, char** argv) {
  nlohmann::json defaults;
  try {
    defaults = default_config_json();
  } catch (const ApiFailure& f) {
    std::cerr << "octpad: " << f.message << '\n';
    return kExitData;
  }
  Overrides o(defaults);

  CLI::App app{"octpad: presentation attack detection on OCT fingerprint B-scans"};
  app.set_help_flag("--help", "print this help and exit");
  app.require_subcommand(1, 1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override it")->check(CLI::ExistingFile);
  o.add<std::uint64_t>(&app, "--seed", "seed", "seed for every random draw");

  // synth
  std::string synth_dir;
  auto* synth = app.add_subcommand("synth", "generate a synthetic phantom corpus");
  synth->add_option("--out-dir", synth_dir, "output directory")->required();
  o.add<int>(synth, "--n-bonafide", "synth.n_bonafide", "bonafide scans");
  o.add<int>(synth, "--n-pa", "synth.n_pa", "PA scans");
  o.add<int>(synth, "--height", "synth.height", "scan height");
  o.add<int>(synth, "--width", "synth.width", "scan width");
  o.add<double>(synth, "--speckle", "synth.speckle_sigma", "speckle standard deviation");
  o.add<double>(synth, "--brightness", "synth.band_brightness", "bright band intensity");
  o.add_list(synth, "--materials", "synth.materials", "PA material tags");

  // preprocess
  std::string pre_in, pre_out;
  auto* pre = app.add_subcommand("preprocess", "denoise, dilate and binarize one scan");
  pre->add_option("--in", pre_in, "input scan")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", pre_out, "output mask (0/255)")->required();
  add_preprocess_flags(pre, o);

  // patches
  std::string pat_scan, pat_mask, pat_dir, pat_id;
  auto* pat = app.add_subcommand("patches", "extract patches from a scan and its mask");
  pat->add_option("--scan", pat_scan, "scan image")->required()->check(CLI::ExistingFile);
  pat->add_option("--mask", pat_mask, "mask image")->required()->check(CLI::ExistingFile);
  pat->add_option("--out-dir", pat_dir, "output directory")->required();
  pat->add_option("--scan-id", pat_id, "scan id used in file names (default: scan file stem)");
  add_patch_flags(pat, o);

  // train
  std::string train_manifest, train_out;
  auto* tr = app.add_subcommand("train", "train a model on the scans of a manifest");
  tr->add_option("--manifest", train_manifest, "scan manifest (JSONL)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", train_out, "checkpoint path")->required();
  add_train_flags(tr, o);
  add_preprocess_flags(tr, o);
  add_patch_flags(tr, o);

  // score
  std::string score_model, score_manifest, score_out;
  auto* sc = app.add_subcommand("score", "global spoofness score for every scan of a manifest");
  sc->add_option("--model", score_model, "checkpoint")->required()->check(CLI::ExistingFile);
  sc->add_option("--manifest", score_manifest, "scan manifest (JSONL)")->required()->check(CLI::ExistingFile);
  sc->add_option("--out", score_out, "scores CSV")->required();
  add_preprocess_flags(sc, o);
  add_patch_flags(sc, o);

  // fixate
  std::string fix_model, fix_patch, fix_out, fix_points;
  auto* fx = app.add_subcommand("fixate", "fixation heatmap of one patch");
  fx->add_option("--model", fix_model, "checkpoint")->required()->check(CLI::ExistingFile);
  fx->add_option("--patch", fix_patch, "patch image")->required()->check(CLI::ExistingFile);
  fx->add_option("--out", fix_out, "heatmap image")->required();
  fx->add_option("--points", fix_points, "fixation points CSV (default: heatmap path with .csv)");
  o.add<double>(fx, "--sigma", "heatmap.sigma", "Gaussian sigma of the heatmap");
  o.add<int>(fx, "--topk", "heatmap.topk", "inputs kept per fully connected unit");

  // eval
  std::string eval_scores, eval_dir;
  auto* ev = app.add_subcommand("eval", "ROC and TDR at a bounded FDR from a scores CSV");
  ev->add_option("--scores", eval_scores, "scores CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--out-dir", eval_dir, "directory for roc.csv, roc.svg and summary.json");
  o.add<double>(ev, "--fdr", "eval.fdr", "FDR bound");

  // xval
  std::string xv_manifest, xv_dir = "xval";
  auto* xv = app.add_subcommand("xval", "stratified k-fold cross-validation");
  xv->add_option("--manifest", xv_manifest, "scan manifest (JSONL)")->required()->check(CLI::ExistingFile);
  xv->add_option("--out-dir", xv_dir, "output directory")->capture_default_str();
  o.add<int>(xv, "--k", "eval.k", "folds");
  o.add<double>(xv, "--fdr", "eval.fdr", "FDR bound");
  add_train_flags(xv, o);
  add_preprocess_flags(xv, o);
  add_patch_flags(xv, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    octpad_config* raw = nullptr;
    check(octpad_config_new(&raw));
    ConfigPtr cfg(raw);
    for (const std::string* out : {&pre_out, &train_out, &score_out, &fix_out, &fix_points})
      if (!out->empty()) make_parent(*out);
    if (!config_path.empty()) check(octpad_config_load(cfg.get(), config_path.c_str()));
    o.apply(cfg.get());

    if (synth->parsed()) {
      check(octpad_synth_corpus(cfg.get(), synth_dir.c_str()));
      write_provenance(cfg.get(), synth_dir);
      std::cout << (fs::path(synth_dir) / "manifest.jsonl").string() << '\n';
    } else if (pre->parsed()) {
      ImagePtr scan = load_image(pre_in);
      octpad_image* mask = nullptr;
      check(octpad_preprocess(cfg.get(), scan.get(), &mask));
      ImagePtr owned(mask);
      check(octpad_image_save(owned.get(), pre_out.c_str()));
      write_provenance(cfg.get(), parent_of(pre_out));
    } else if (pat->parsed()) {
      ImagePtr scan = load_image(pat_scan);
      ImagePtr mask = load_image(pat_mask);
      if (pat_id.empty()) pat_id = fs::path(pat_scan).stem().string();
      std::size_t n = 0;
      check(octpad_extract_patches(cfg.get(), scan.get(), mask.get(), pat_id.c_str(), pat_dir.c_str(), &n));
      write_provenance(cfg.get(), pat_dir);
      std::cout << n << " patches\n";
    } else if (tr->parsed()) {
      octpad_model* m = nullptr;
      check(octpad_train(cfg.get(), train_manifest.c_str(), print_progress, nullptr, &m));
      ModelPtr model(m);
      check(octpad_model_save(model.get(), train_out.c_str()));
      write_provenance(cfg.get(), parent_of(train_out));
    } else if (sc->parsed()) {
      ModelPtr model = load_model(score_model);
      check(octpad_score_manifest(cfg.get(), model.get(), score_manifest.c_str(), score_out.c_str()));
      write_provenance(cfg.get(), parent_of(score_out));
    } else if (fx->parsed()) {
      ModelPtr model = load_model(fix_model);
      ImagePtr patch = load_image(fix_patch);
      if (fix_points.empty()) fix_points = fs::path(fix_out).replace_extension(".csv").string();
      octpad_image* heat = nullptr;
      double spoof = 0.0;
      check(octpad_fixate(cfg.get(), model.get(), patch.get(), &heat, fix_points.c_str(), &spoof));
      ImagePtr owned(heat);
      check(octpad_image_save(owned.get(), fix_out.c_str()));
      write_provenance(cfg.get(), parent_of(fix_out));
      std::printf("spoofness %.6f\n", spoof);
    } else if (ev->parsed()) {
      octpad_operating_point op{};
      check(octpad_eval_scores(cfg.get(), eval_scores.c_str(), eval_dir.empty() ? nullptr : eval_dir.c_str(), &op));
      if (!eval_dir.empty()) write_provenance(cfg.get(), eval_dir);
      std::printf("TDR %.6f at FDR %.6f (tau %.6g)\n", op.tdr, op.fdr, op.tau);
    } else if (xv->parsed()) {
      double mean_tdr = 0.0;
      double sd_tdr = 0.0;
      check(octpad_crossval(cfg.get(), xv_manifest.c_str(), xv_dir.c_str(), print_progress, nullptr, &mean_tdr, &sd_tdr));
      write_provenance(cfg.get(), xv_dir);
      std::printf("mean TDR %.6f (s.d. %.6f)\n", mean_tdr, sd_tdr);
    }
  } catch (const ApiFailure& f) {
    std::cerr << "octpad: " << f.message << '\n';
    return f.status == OCTPAD_ERR_INVALID_ARGUMENT ? kExitUsage : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "octpad: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
