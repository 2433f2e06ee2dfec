#include "octpad/octpad.h"

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <memory>
#include <fstream>
#include <new>
#include <string>

#include "json.hpp"
#include "octpad/cnn.hpp"
#include "octpad/error.hpp"
#include "octpad/eval.hpp"
#include "octpad/fixations.hpp"
#include "octpad/image.hpp"
#include "octpad/patches.hpp"
#include "octpad/preprocess.hpp"
#include "octpad/synth.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

struct octpad_config {
  json doc;
};

struct octpad_image {
  octpad::Image image;
};

struct octpad_model {
  octpad::CnnModel model;
};

namespace {

thread_local std::string g_last_error;

octpad_status status_of(octpad::ErrorKind kind) {
  switch (kind) {
    case octpad::ErrorKind::InvalidArgument: return OCTPAD_ERR_INVALID_ARGUMENT;
    case octpad::ErrorKind::Io: return OCTPAD_ERR_IO;
    case octpad::ErrorKind::Format: return OCTPAD_ERR_FORMAT;
    case octpad::ErrorKind::Data: return OCTPAD_ERR_DATA;
    case octpad::ErrorKind::Numeric: return OCTPAD_ERR_NUMERIC;
  }
  return OCTPAD_ERR_INTERNAL;
}

template <typename Fn>
octpad_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return OCTPAD_OK;
  } catch (const octpad::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const json::exception& e) {
    g_last_error = e.what();
    return OCTPAD_ERR_FORMAT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return OCTPAD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return OCTPAD_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return OCTPAD_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) octpad::fail(octpad::ErrorKind::InvalidArgument, std::string(what) + " is null");
}

// ---------------------------------------------------------------- config

json default_config() {
  json materials = json::array();
  for (const auto& m : octpad::default_materials()) materials.push_back(m);
  const octpad::PreprocessConfig pp;
  const octpad::PatchConfig pc;
  const octpad::TrainConfig tc;
  const octpad::HeatmapConfig hc;
  const octpad::CrossValConfig cv;
  const octpad::PhantomParams ph;
  return json{
      {"seed", cv.seed},
      {"preprocess", {{"h", pp.h}, {"template", pp.nlm_template}, {"search", pp.nlm_search}, {"dilate", pp.dilation_kernel}}},
      {"patches",
       {{"stride", pc.stride},
        {"window", pc.window},
        {"min_count", pc.min_nonzero},
        {"patch_h", pc.patch_h},
        {"patch_w", pc.patch_w},
        {"anchor_row", pc.anchor_row},
        {"anchor_col", pc.anchor_col},
        {"max_patches", pc.max_patches}}},
      {"train",
       {{"batch", tc.batch_size},
        {"epochs", tc.epochs},
        {"lr_start", tc.lr_start},
        {"lr_end", tc.lr_end},
        {"rmsprop_decay", tc.rmsprop_decay},
        {"rmsprop_epsilon", tc.rmsprop_epsilon},
        {"augment", tc.augment},
        {"evaluate_each_epoch", tc.evaluate_each_epoch},
        {"patches_per_scan", cv.train_patches_per_scan}}},
      {"heatmap", {{"sigma", hc.kde_sigma}, {"topk", hc.top_k_fc}}},
      {"eval", {{"k", cv.k}, {"fdr", cv.fdr_max}}},
      {"synth",
       {{"n_bonafide", 600},
        {"n_pa", 300},
        {"height", ph.height},
        {"width", ph.width},
        {"speckle_sigma", ph.speckle_sigma},
        {"band_brightness", ph.band_brightness},
        {"materials", materials}}},
  };
}

struct Resolved {
  std::uint64_t seed = 0;
  octpad::PreprocessConfig pp;
  octpad::PatchConfig pc;
  octpad::TrainConfig tc;
  octpad::HeatmapConfig hc;
  octpad::CrossValConfig cv;
  octpad::PhantomParams phantom;
  int n_bonafide = 0;
  int n_pa = 0;
  std::vector<std::string> materials;
};

[[noreturn]] void bad_value(const std::string& key, const char* want) {
  octpad::fail(octpad::ErrorKind::InvalidArgument, "config key " + key + " must be " + want);
}

int get_int(const json& j, const std::string& key) {
  if (!j.is_number_integer()) bad_value(key, "an integer");
  const auto v = j.get<std::int64_t>();
  if (v < INT32_MIN || v > INT32_MAX) bad_value(key, "a 32-bit integer");
  return static_cast<int>(v);
}

double get_double(const json& j, const std::string& key) {
  if (!j.is_number()) bad_value(key, "a number");
  return j.get<double>();
}

bool get_bool(const json& j, const std::string& key) {
  if (!j.is_boolean()) bad_value(key, "true or false");
  return j.get<bool>();
}

Resolved resolve(const json& doc) {
  Resolved r;
  if (!doc.at("seed").is_number_unsigned()) bad_value("seed", "a non-negative integer");
  r.seed = doc.at("seed").get<std::uint64_t>();

  const json& p = doc.at("preprocess");
  r.pp.h = get_double(p.at("h"), "preprocess.h");
  r.pp.nlm_template = get_int(p.at("template"), "preprocess.template");
  r.pp.nlm_search = get_int(p.at("search"), "preprocess.search");
  r.pp.dilation_kernel = get_int(p.at("dilate"), "preprocess.dilate");
  r.pp.validate();

  const json& q = doc.at("patches");
  r.pc.stride = get_int(q.at("stride"), "patches.stride");
  r.pc.window = get_int(q.at("window"), "patches.window");
  r.pc.min_nonzero = get_int(q.at("min_count"), "patches.min_count");
  r.pc.patch_h = get_int(q.at("patch_h"), "patches.patch_h");
  r.pc.patch_w = get_int(q.at("patch_w"), "patches.patch_w");
  r.pc.anchor_row = get_int(q.at("anchor_row"), "patches.anchor_row");
  r.pc.anchor_col = get_int(q.at("anchor_col"), "patches.anchor_col");
  r.pc.max_patches = get_int(q.at("max_patches"), "patches.max_patches");
  r.pc.validate();

  const json& t = doc.at("train");
  r.tc.batch_size = get_int(t.at("batch"), "train.batch");
  r.tc.epochs = get_int(t.at("epochs"), "train.epochs");
  r.tc.lr_start = get_double(t.at("lr_start"), "train.lr_start");
  r.tc.lr_end = get_double(t.at("lr_end"), "train.lr_end");
  r.tc.rmsprop_decay = get_double(t.at("rmsprop_decay"), "train.rmsprop_decay");
  r.tc.rmsprop_epsilon = get_double(t.at("rmsprop_epsilon"), "train.rmsprop_epsilon");
  r.tc.augment = get_bool(t.at("augment"), "train.augment");
  r.tc.evaluate_each_epoch = get_bool(t.at("evaluate_each_epoch"), "train.evaluate_each_epoch");
  r.tc.seed = r.seed;
  r.tc.validate();
  r.cv.train_patches_per_scan = get_int(t.at("patches_per_scan"), "train.patches_per_scan");
  if (r.cv.train_patches_per_scan < 0) bad_value("train.patches_per_scan", ">= 0");

  const json& h = doc.at("heatmap");
  r.hc.kde_sigma = get_double(h.at("sigma"), "heatmap.sigma");
  r.hc.top_k_fc = get_int(h.at("topk"), "heatmap.topk");
  r.hc.validate();

  const json& e = doc.at("eval");
  r.cv.k = get_int(e.at("k"), "eval.k");
  r.cv.fdr_max = get_double(e.at("fdr"), "eval.fdr");
  r.cv.seed = r.seed;
  if (r.cv.k < 2) bad_value("eval.k", ">= 2");
  if (!(r.cv.fdr_max >= 0.0 && r.cv.fdr_max <= 1.0)) bad_value("eval.fdr", "in [0, 1]");

  const json& s = doc.at("synth");
  r.n_bonafide = get_int(s.at("n_bonafide"), "synth.n_bonafide");
  r.n_pa = get_int(s.at("n_pa"), "synth.n_pa");
  if (r.n_bonafide < 0) bad_value("synth.n_bonafide", ">= 0");
  if (r.n_pa < 0) bad_value("synth.n_pa", ">= 0");
  r.phantom.height = get_int(s.at("height"), "synth.height");
  r.phantom.width = get_int(s.at("width"), "synth.width");
  r.phantom.speckle_sigma = get_double(s.at("speckle_sigma"), "synth.speckle_sigma");
  r.phantom.band_brightness = get_double(s.at("band_brightness"), "synth.band_brightness");
  r.phantom.seed = r.seed;
  r.phantom.validate();
  const json& mats = s.at("materials");
  if (!mats.is_array() || mats.empty()) bad_value("synth.materials", "a non-empty list of names");
  for (const auto& m : mats) {
    if (!m.is_string() || m.get<std::string>().empty()) bad_value("synth.materials", "a non-empty list of names");
    r.materials.push_back(m.get<std::string>());
  }
  return r;
}

// Overlays `patch` on `target`. Every key must already exist in `target`;
// sections merge key by key.
void merge_into(json& target, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) octpad::fail(octpad::ErrorKind::InvalidArgument, "config " + (prefix.empty() ? std::string("document") : prefix) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!target.contains(key)) octpad::fail(octpad::ErrorKind::InvalidArgument, "unknown config key " + path);
    if (target[key].is_object())
      merge_into(target[key], value, path);
    else
      target[key] = value;
  }
}

void apply_patch(octpad_config* cfg, const json& patch) {
  json next = cfg->doc;
  merge_into(next, patch, "");
  resolve(next);
  cfg->doc = std::move(next);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) octpad::fail(octpad::ErrorKind::Io, "cannot create directory " + dir.string());
}

struct ProgressAdapter {
  octpad_progress_fn fn;
  void* user;

  void operator()(const std::string& msg) const {
    if (fn) fn(msg.c_str(), user);
  }
};

std::string epoch_line(const octpad::EpochStats& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %d loss %.6f acc %.4f", s.epoch, s.train_loss, s.train_accuracy);
  std::string line = buf;
  if (!std::isnan(s.eval_loss)) {
    std::snprintf(buf, sizeof buf, " eval_loss %.6f eval_acc %.4f", s.eval_loss, s.eval_accuracy);
    line += buf;
  }
  return line;
}

}  // namespace

extern "C" {

const char* octpad_last_error(void) { return g_last_error.c_str(); }

const char* octpad_version(void) { return "1.0.0"; }

octpad_status octpad_config_new(octpad_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new octpad_config{default_config()};
  });
}

void octpad_config_free(octpad_config* cfg) { delete cfg; }

octpad_status octpad_config_load(octpad_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "config");
    require(path, "path");
    std::ifstream in(path);
    if (!in) octpad::fail(octpad::ErrorKind::Io, std::string("cannot open ") + path);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      octpad::fail(octpad::ErrorKind::InvalidArgument, std::string(path) + ": " + e.what());
    }
    apply_patch(cfg, doc);
  });
}

octpad_status octpad_config_set(octpad_config* cfg, const char* key, const char* value_json) {
  return guarded([&] {
    require(cfg, "config");
    require(key, "key");
    require(value_json, "value");
    json value;
    try {
      value = json::parse(value_json);
    } catch (const json::exception&) {
      octpad::fail(octpad::ErrorKind::InvalidArgument, std::string("bad value for ") + key + ": " + value_json);
    }
    // "section.key" -> {"section": {"key": value}}
    json patch = value;
    std::string k = key;
    for (auto dot = k.rfind('.'); dot != std::string::npos; dot = k.rfind('.')) {
      patch = json{{k.substr(dot + 1), patch}};
      k.resize(dot);
    }
    apply_patch(cfg, json{{k, patch}});
  });
}

octpad_status octpad_config_save(const octpad_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "config");
    require(path, "path");
    std::ofstream out(path);
    if (!out) octpad::fail(octpad::ErrorKind::Io, std::string("cannot write ") + path);
    out << cfg->doc.dump(2) << '\n';
    if (!out) octpad::fail(octpad::ErrorKind::Io, std::string("cannot write ") + path);
  });
}

octpad_status octpad_config_json(const octpad_config* cfg, char* buf, size_t cap, size_t* len) {
  return guarded([&] {
    require(cfg, "config");
    const std::string text = cfg->doc.dump(2);
    if (len) *len = text.size();
    if (buf && cap > 0) {
      const std::size_t n = std::min(cap - 1, text.size());
      std::memcpy(buf, text.data(), n);
      buf[n] = '\0';
    }
  });
}

octpad_status octpad_image_create(int height, int width, const uint8_t* pixels, octpad_image** out) {
  return guarded([&] {
    require(out, "out");
    require(pixels, "pixels");
    if (height <= 0 || width <= 0) octpad::fail(octpad::ErrorKind::InvalidArgument, "image dimensions must be positive");
    const auto n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    *out = new octpad_image{octpad::Image(height, width, std::vector<std::uint8_t>(pixels, pixels + n))};
  });
}

octpad_status octpad_image_load(const char* path, octpad_image** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new octpad_image{octpad::load_image(path)};
  });
}

octpad_status octpad_image_save(const octpad_image* img, const char* path) {
  return guarded([&] {
    require(img, "image");
    require(path, "path");
    octpad::save_image(img->image, path);
  });
}

void octpad_image_free(octpad_image* img) { delete img; }

int octpad_image_height(const octpad_image* img) { return img ? img->image.height() : 0; }

int octpad_image_width(const octpad_image* img) { return img ? img->image.width() : 0; }

const uint8_t* octpad_image_data(const octpad_image* img) { return img ? img->image.pixels().data() : nullptr; }

octpad_status octpad_synth_corpus(const octpad_config* cfg, const char* out_dir) {
  return guarded([&] {
    require(cfg, "config");
    require(out_dir, "out_dir");
    const Resolved r = resolve(cfg->doc);
    octpad::generate_corpus(r.n_bonafide, r.n_pa, r.materials, r.phantom, out_dir);
  });
}

octpad_status octpad_preprocess(const octpad_config* cfg, const octpad_image* scan, octpad_image** mask_out) {
  return guarded([&] {
    require(cfg, "config");
    require(scan, "scan");
    require(mask_out, "mask_out");
    const Resolved r = resolve(cfg->doc);
    *mask_out = new octpad_image{octpad::preprocess_pipeline(scan->image, r.pp).to_image()};
  });
}

octpad_status octpad_extract_patches(const octpad_config* cfg, const octpad_image* scan, const octpad_image* mask,
                                     const char* scan_id, const char* out_dir, size_t* n_written) {
  return guarded([&] {
    require(cfg, "config");
    require(scan, "scan");
    require(mask, "mask");
    require(scan_id, "scan_id");
    require(out_dir, "out_dir");
    if (mask->image.height() != scan->image.height() || mask->image.width() != scan->image.width())
      octpad::fail(octpad::ErrorKind::InvalidArgument, "mask and scan sizes differ");
    const Resolved r = resolve(cfg->doc);
    octpad::BScan b;
    b.scan_id = scan_id;
    b.image = scan->image;
    const auto patches = octpad::patches_for_scan(b, octpad::BinaryMask::from_image(mask->image), r.pc);
    ensure_dir(out_dir);
    const std::size_t n = octpad::write_patches(patches, out_dir, fs::path(out_dir) / "patches.jsonl");
    if (n_written) *n_written = n;
  });
}

octpad_status octpad_train(const octpad_config* cfg, const char* manifest, octpad_progress_fn progress, void* user,
                           octpad_model** out) {
  return guarded([&] {
    require(cfg, "config");
    require(manifest, "manifest");
    require(out, "out");
    const Resolved r = resolve(cfg->doc);
    const ProgressAdapter say{progress, user};
    const auto records = octpad::parse_manifest(manifest);
    say("segmenting " + std::to_string(records.size()) + " scans");
    const auto scans = octpad::prepare_scans(records, r.pp, r.pc);
    auto result = octpad::train_on_scans(scans, r.pc, r.tc, r.cv.train_patches_per_scan, octpad::mix_seed(r.seed, 0x5CA7),
                                         [&](const octpad::EpochStats& s) { say(epoch_line(s)); });
    *out = new octpad_model{std::move(result.model)};
  });
}

octpad_status octpad_model_save(const octpad_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    octpad::save_checkpoint(model->model, path);
  });
}

octpad_status octpad_model_load(const char* path, octpad_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new octpad_model{octpad::load_checkpoint(path)};
  });
}

void octpad_model_free(octpad_model* model) { delete model; }

size_t octpad_model_param_count(const octpad_model* model) { return model ? model->model.arch().param_count() : 0; }

octpad_status octpad_spoofness(const octpad_model* model, const octpad_image* patch, double* out) {
  return guarded([&] {
    require(model, "model");
    require(patch, "patch");
    require(out, "out");
    *out = octpad::spoofness(model->model, patch->image);
  });
}

octpad_status octpad_score_manifest(const octpad_config* cfg, const octpad_model* model, const char* manifest,
                                    const char* out_csv) {
  return guarded([&] {
    require(cfg, "config");
    require(model, "model");
    require(manifest, "manifest");
    require(out_csv, "out_csv");
    const Resolved r = resolve(cfg->doc);
    const auto records = octpad::parse_manifest(manifest);
    octpad::write_scores_csv(octpad::score_scans(model->model, records, r.pp, r.pc), out_csv);
  });
}

octpad_status octpad_fixate(const octpad_config* cfg, const octpad_model* model, const octpad_image* patch,
                            octpad_image** heat_out, const char* points_csv, double* spoofness) {
  return guarded([&] {
    require(cfg, "config");
    require(model, "model");
    require(patch, "patch");
    require(heat_out, "heat_out");
    const Resolved r = resolve(cfg->doc);
    const auto& img = patch->image;
    octpad::ForwardTrace<float> trace;
    const std::vector<float> input = octpad::normalize_patch(img);
    const octpad::Shape& in = model->model.arch().input();
    if (in.height != img.height() || in.width != img.width())
      octpad::fail(octpad::ErrorKind::InvalidArgument, "patch size does not match the model input");
    model->model.forward(input, trace);
    const auto fix = octpad::backtrack_fixations(model->model, trace, r.hc);
    auto heat = std::make_unique<octpad_image>(octpad_image{octpad::fixation_heatmap(fix, img.height(), img.width(), r.hc)});
    if (points_csv) octpad::write_fixations_csv(fix, points_csv);
    if (spoofness) *spoofness = trace.probabilities()[octpad::kPaClass];
    *heat_out = heat.release();
  });
}

octpad_status octpad_eval_scores(const octpad_config* cfg, const char* scores_csv, const char* out_dir,
                                 octpad_operating_point* out) {
  return guarded([&] {
    require(cfg, "config");
    require(scores_csv, "scores_csv");
    const Resolved r = resolve(cfg->doc);
    const auto records = octpad::read_scores_csv(scores_csv);
    const auto curve = octpad::roc(records);
    const auto op = octpad::tdr_at_fdr(curve, r.cv.fdr_max);
    if (out_dir) {
      const fs::path dir = out_dir;
      ensure_dir(dir);
      octpad::write_roc_csv(curve, dir / "roc.csv");
      octpad::write_roc_svg({curve}, dir / "roc.svg");
      std::size_t n_pa = 0;
      for (const auto& rec : records) n_pa += rec.label == octpad::Label::PA;
      const json summary{{"fdr_max", r.cv.fdr_max},
                         {"tdr", op.tdr},
                         {"fdr", op.fdr},
                         {"tau", std::isinf(op.tau) ? json("inf") : json(op.tau)},
                         {"n_bonafide", records.size() - n_pa},
                         {"n_pa", n_pa}};
      std::ofstream f(dir / "summary.json");
      if (!f) octpad::fail(octpad::ErrorKind::Io, "cannot write summary.json");
      f << summary.dump(2) << '\n';
    }
    if (out) *out = octpad_operating_point{op.tdr, op.fdr, op.tau};
  });
}

octpad_status octpad_crossval(const octpad_config* cfg, const char* manifest, const char* out_dir,
                              octpad_progress_fn progress, void* user, double* mean_tdr, double* sd_tdr) {
  return guarded([&] {
    require(cfg, "config");
    require(manifest, "manifest");
    require(out_dir, "out_dir");
    const Resolved r = resolve(cfg->doc);
    const auto records = octpad::parse_manifest(manifest);
    const auto result = octpad::cross_validate(records, r.pp, r.pc, r.tc, r.cv, out_dir, ProgressAdapter{progress, user});
    if (mean_tdr) *mean_tdr = result.mean_tdr;
    if (sd_tdr) *sd_tdr = result.sd_tdr;
  });
}

}  // extern "C"
