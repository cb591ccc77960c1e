#include "nvlm/c_api.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <new>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core/assembly.hpp"
#include "core/config.hpp"
#include "core/error.hpp"
#include "core/image.hpp"
#include "core/perf.hpp"
#include "core/rng.hpp"
#include "core/sequence.hpp"
#include "core/tiler.hpp"

struct nvlm_ctx {
  nvlm::ConfigMap options;
  std::string last_error;
};

namespace {

using nvlm::ErrorCode;
using nvlm::fail;

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p) std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

nvlm_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return NVLM_ERR_INVALID_ARG;
    case ErrorCode::ShapeMismatch: return NVLM_ERR_SHAPE;
    case ErrorCode::Io: return NVLM_ERR_IO;
    case ErrorCode::CheckFailed: return NVLM_ERR_CHECK_FAILED;
    case ErrorCode::Internal: return NVLM_ERR_INTERNAL;
  }
  return NVLM_ERR_INTERNAL;
}

template <typename Fn>
nvlm_status guarded(nvlm_ctx* ctx, Fn&& fn) {
  if (!ctx) return NVLM_ERR_INVALID_ARG;
  try {
    fn();
    ctx->last_error.clear();
    return NVLM_OK;
  } catch (const nvlm::Error& e) {
    ctx->last_error = e.what();
    return to_status(e.code());
  } catch (const std::exception& e) {
    ctx->last_error = e.what();
    return NVLM_ERR_INTERNAL;
  }
}

// Rough trainable-scalar estimate; blocks documentation-scale presets from
// the tensor-executing entry points without allocating anything.
void refuse_documentation_scale(const nvlm::ModelConfig& mc) {
  double d = mc.decoder.d_model;
  double e = mc.encoder.embed_dim;
  double scalars = 2.0 * mc.decoder.vocab * d + mc.decoder.max_seq * d +
                   12.0 * mc.decoder.n_layers * d * d + 12.0 * mc.encoder.depth * e * e +
                   2.0 * mc.post_shuffle_channels() * std::max(mc.proj_hidden, mc.decoder.d_model);
  if (scalars > 2e7)
    fail(ErrorCode::InvalidArgument, "config needs ~", static_cast<long long>(scalars),
         " parameters; tensor execution is refused above 20M (documentation-scale preset?)");
}

std::string grad_group(const std::string& name) {
  if (name.find(".gate_") != std::string::npos) return "gates";
  return name.substr(0, name.find('.'));
}

// Central difference through a full fresh-graph forward at the current
// parameter values.
double central_diff(nvlm::ModelInstance& model, const nvlm::TrainingExample& ex, nvlm::Tensor& p,
                    std::int64_t i, double h) {
  double saved = p[i];
  p[i] = saved + h;
  double up = model.loss_of(ex);
  p[i] = saved - h;
  double down = model.loss_of(ex);
  p[i] = saved;
  return (up - down) / (2.0 * h);
}

// Two-tile image (plus thumbnail), so every architecture routes blocks both
// into the decoder and across attention; a one-tile image would leave H's
// cross-attention parameters without gradients.
nvlm::TrainingExample probe_example(const nvlm::ModelConfig& mc) {
  nvlm::Image img(2 * mc.encoder.tile_size, mc.encoder.tile_size, mc.encoder.in_channels);
  nvlm::Rng rng(mc.decoder.seed + 7);
  for (double& p : img.pixels) p = static_cast<double>(rng.next_int(0, 255));
  nvlm::TrainingExample ex;
  ex.image = std::move(img);
  ex.prompt = std::string("probe ") + nvlm::kImageMarker + " now";
  ex.response = "ok";
  return ex;
}

}  // namespace

extern "C" {

const char* nvlm_version(void) { return "0.1.0"; }

nvlm_status nvlm_ctx_create(nvlm_ctx** out) {
  if (!out) return NVLM_ERR_INVALID_ARG;
  *out = new (std::nothrow) nvlm_ctx();
  return *out ? NVLM_OK : NVLM_ERR_INTERNAL;
}

void nvlm_ctx_destroy(nvlm_ctx* ctx) { delete ctx; }

const char* nvlm_last_error(const nvlm_ctx* ctx) { return ctx ? ctx->last_error.c_str() : ""; }

nvlm_status nvlm_load_config(nvlm_ctx* ctx, const char* path) {
  return guarded(ctx, [&] {
    if (!path) fail(ErrorCode::InvalidArgument, "null config path");
    nvlm::ConfigMap file = nvlm::ConfigMap::parse_file(path);
    for (const auto& [k, v] : file.values()) ctx->options.set(k, v);
  });
}

nvlm_status nvlm_set_option(nvlm_ctx* ctx, const char* key, const char* value) {
  return guarded(ctx, [&] {
    if (!key || !*key || !value) fail(ErrorCode::InvalidArgument, "option key and value required");
    ctx->options.set(key, value);
  });
}

void nvlm_string_free(char* s) { std::free(s); }

nvlm_status nvlm_tile_image(nvlm_ctx* ctx, const char* image_path, const char* out_dir,
                            char** manifest_json) {
  return guarded(ctx, [&] {
    if (!image_path) fail(ErrorCode::InvalidArgument, "null image path");
    nvlm::ModelConfig mc = nvlm::model_config_from(ctx->options);
    nvlm::Image img = nvlm::load_image(image_path);
    nvlm::TileLayout lo =
        nvlm::layout(img.width, img.height, nvlm::RatioSet::with_max_tiles(mc.decoder.max_tiles),
                     mc.encoder.tile_size);
    std::vector<std::string> tile_files;
    std::string thumb_file;
    if (out_dir && *out_dir) {
      std::filesystem::path dir(out_dir);
      std::filesystem::create_directories(dir);
      nvlm::CutTiles ct = nvlm::cut(img, lo);
      for (std::size_t i = 0; i < ct.tiles.size(); ++i) {
        std::string name = "tile_" + std::to_string(i + 1) + ".png";
        nvlm::save_png(ct.tiles[i], (dir / name).string());
        tile_files.push_back(name);
      }
      if (ct.thumbnail) {
        thumb_file = "thumbnail.png";
        nvlm::save_png(*ct.thumbnail, (dir / thumb_file).string());
      }
    }
    std::string manifest =
        nvlm::layout_manifest_json(lo, mc.decoder.tokens_per_tile, tile_files, thumb_file);
    if (out_dir && *out_dir) {
      std::filesystem::path mpath = std::filesystem::path(out_dir) / "manifest.json";
      std::FILE* f = std::fopen(mpath.string().c_str(), "wb");
      if (!f) fail(ErrorCode::Io, "cannot write ", mpath.string());
      std::fwrite(manifest.data(), 1, manifest.size(), f);
      std::fclose(f);
    }
    if (manifest_json) *manifest_json = dup_string(manifest);
  });
}

nvlm_status nvlm_build_sequence(nvlm_ctx* ctx, const char* example_json, char** record_json) {
  return guarded(ctx, [&] {
    if (!example_json) fail(ErrorCode::InvalidArgument, "null example JSON");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(example_json);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::InvalidArgument, "malformed example JSON: ", e.what());
    }
    if (!j.is_object() || !j.contains("user"))
      fail(ErrorCode::InvalidArgument, "example JSON needs at least a \"user\" field");

    nvlm::ModelConfig mc = nvlm::model_config_from(ctx->options);
    nvlm::PlanRequest req;
    req.arch = mc.arch;
    req.scheme = mc.tag_scheme;
    req.chat.system = j.value("system", req.chat.system);
    req.chat.user = j.at("user").get<std::string>();
    req.chat.response = j.value("response", std::string());
    if (j.contains("image")) {
      const auto& im = j.at("image");
      if (!im.is_object() || !im.contains("width") || !im.contains("height"))
        fail(ErrorCode::InvalidArgument, "image field needs width and height");
      req.image_width = im.at("width").get<int>();
      req.image_height = im.at("height").get<int>();
    }
    req.tile_size = mc.encoder.tile_size;
    req.max_tiles = mc.decoder.max_tiles;
    req.tokens_per_tile = mc.decoder.tokens_per_tile;

    nvlm::Tokenizer tok;
    nvlm::PlanResult res = nvlm::plan_sequence(req, tok);
    if (record_json)
      *record_json =
          dup_string(nvlm::sequence_record_json(res.seq, to_string(req.arch), res.kv_tag_ids));
  });
}

nvlm_status nvlm_grad_check(nvlm_ctx* ctx, int corrupt, char** report) {
  nvlm_status st = guarded(ctx, [&] {
    nvlm::ModelConfig mc = nvlm::model_config_from(ctx->options);
    refuse_documentation_scale(mc);
    nvlm::ModelInstance model(mc);
    model.set_stage(nvlm::TrainStage::Full);
    nvlm::TrainingExample ex = probe_example(mc);

    nvlm::Graph g;
    nvlm::GraphBinder b(g, model.params());
    auto out = model.forward(g, b, ex);
    g.backward(out.loss);

    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& [name, node] : b.bound())
      if (model.params().trainable(name) && g.has_grad(node)) groups[grad_group(name)].push_back(name);
    if (groups.empty()) fail(ErrorCode::Internal, "no trainable parameters received gradients");

    const double tol = 1e-3;
    const double h = 1e-5;
    std::string text;
    int failed_groups = 0;
    for (const auto& [group, names] : groups) {
      // First, middle, and last parameter of the group; up to 4 elements each.
      std::vector<std::string> picks = {names.front()};
      if (names.size() > 2) picks.push_back(names[names.size() / 2]);
      if (names.size() > 1) picks.push_back(names.back());
      double max_err = 0.0;
      int checked = 0;
      for (const std::string& name : picks) {
        nvlm::Tensor& p = model.params().get(name);
        const nvlm::Tensor& an = g.grad(b[name]);
        std::int64_t n = p.numel();
        std::vector<std::int64_t> idx = {0};
        if (n > 1) idx.push_back(n - 1);
        if (n > 3) idx.push_back(n / 3);
        if (n > 5) idx.push_back(2 * n / 3);
        for (std::int64_t i : idx) {
          double analytic = an[i] * (corrupt ? 1.05 : 1.0);
          double fd = central_diff(model, ex, p, i, h);
          double denom = std::max({std::fabs(analytic), std::fabs(fd), 1e-6});
          max_err = std::max(max_err, std::fabs(analytic - fd) / denom);
          ++checked;
        }
      }
      bool ok = max_err < tol;
      if (!ok) ++failed_groups;
      char line[160];
      std::snprintf(line, sizeof line, "%-8s params=%zu checked=%d max_rel_err=%.3e %s\n",
                    group.c_str(), names.size(), checked, max_err, ok ? "PASS" : "FAIL");
      text += line;
    }
    if (report) *report = dup_string(text);
    if (failed_groups > 0)
      fail(ErrorCode::CheckFailed, "gradient check failed for ", failed_groups, " group(s)");
  });
  return st;
}

nvlm_status nvlm_overfit(nvlm_ctx* ctx, char** csv, double* final_loss, int* reached) {
  return guarded(ctx, [&] {
    nvlm::ModelConfig mc = nvlm::model_config_from(ctx->options);
    refuse_documentation_scale(mc);
    nvlm::OverfitConfig oc = nvlm::overfit_config_from(ctx->options);
    nvlm::ModelInstance model(mc);
    auto corpus = nvlm::synthetic_ocr_corpus(oc.examples, mc.encoder, mc.decoder.seed + 100);
    nvlm::OverfitResult res = nvlm::overfit_harness(model, corpus, oc);
    if (csv) *csv = dup_string(nvlm::overfit_losses_csv(res));
    if (final_loss) *final_loss = res.final_loss;
    if (reached) *reached = res.reached ? 1 : 0;
  });
}

nvlm_status nvlm_perf(nvlm_ctx* ctx, int run_bench, char** json, char** table) {
  return guarded(ctx, [&] {
    nvlm::ModelConfig mc = nvlm::model_config_from(ctx->options);
    nvlm::BenchRequest br = nvlm::bench_request_from(ctx->options);
    nvlm::CostReport rep = nvlm::analytic_cost(mc.decoder, br.text_len, br.tiles);
    if (run_bench) {
      for (nvlm::Arch a : {nvlm::Arch::D, nvlm::Arch::X, nvlm::Arch::H})
        rep.of(a).measured_ms = nvlm::microbench(a, br).median_ms;
    }
    if (json) *json = dup_string(nvlm::cost_report_json(rep));
    if (table) *table = dup_string(nvlm::cost_report_table(rep));
  });
}

nvlm_status nvlm_dump_config(nvlm_ctx* ctx, char** text) {
  return guarded(ctx, [&] {
    nvlm::ModelConfig mc = nvlm::model_config_from(ctx->options);
    nvlm::OverfitConfig oc = nvlm::overfit_config_from(ctx->options);
    nvlm::BenchRequest br = nvlm::bench_request_from(ctx->options);
    if (text) *text = dup_string(nvlm::dump_config(mc, oc, br));
  });
}

}  // extern "C"
