// nvlm command-line tool. Talks to the core exclusively through the public
// C API in nvlm/c_api.h, so it doubles as a smoke test of the shared library
// surface. Exit codes: 0 success, 1 check failure, 2 usage or input error.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "nvlm/c_api.h"

namespace {

int exit_code(nvlm_status st) {
  switch (st) {
    case NVLM_OK: return 0;
    case NVLM_ERR_CHECK_FAILED: return 1;
    case NVLM_ERR_INTERNAL: return 1;
    default: return 2;  // invalid argument, shape, io
  }
}

struct CtxDeleter {
  void operator()(nvlm_ctx* c) const { nvlm_ctx_destroy(c); }
};
using CtxPtr = std::unique_ptr<nvlm_ctx, CtxDeleter>;

// Takes ownership of a C-API string and frees it on scope exit.
std::string take(char* s) {
  if (!s) return {};
  std::string out(s);
  nvlm_string_free(s);
  return out;
}

int complain(nvlm_ctx* ctx, nvlm_status st) {
  std::fprintf(stderr, "nvlm: %s\n", nvlm_last_error(ctx));
  return exit_code(st);
}

// Writes `text` to `path`, or to stdout when path is empty.
int emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
    return 0;
  }
  std::ofstream f(path, std::ios::binary);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) {
    std::fprintf(stderr, "nvlm: cannot write %s\n", path.c_str());
    return 2;
  }
  return 0;
}

int set_opt(nvlm_ctx* ctx, const char* key, const std::string& value) {
  nvlm_status st = nvlm_set_option(ctx, key, value.c_str());
  return st == NVLM_OK ? 0 : complain(ctx, st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nvlm: tiling, sequence building, and training harness"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand

  std::vector<std::string> config_paths;
  std::string seed;
  std::string out_path;
  app.add_option("--config", config_paths, "config file (TOML subset; repeatable, later wins)");
  app.add_option("--seed", seed, "model seed (overrides config file and NVLM_MICRO_SEED)");
  app.add_option("--out", out_path,
                 "output target: directory for tile, file for other subcommands");

  std::string arch, tags, stage;
  std::string image_path, example_path;
  std::string steps, lr, threshold, examples;
  std::string text_len, tiles, reps;
  bool corrupt = false, bench = false, table = false;

  CLI::App* cmd_tile = app.add_subcommand("tile", "cut an image into tiles and print the manifest");
  cmd_tile->add_option("image", image_path, "input image (.png or .raw)")->required();

  CLI::App* cmd_seq =
      app.add_subcommand("build-seq", "plan a multimodal sequence from an example JSON file");
  cmd_seq->add_option("example", example_path, "example JSON file")->required();
  cmd_seq->add_option("--arch", arch, "architecture: D, X, or H");
  cmd_seq->add_option("--tags", tags, "tag scheme: none, 1d, 2d-grid, or 2d-bbox");

  CLI::App* cmd_grad =
      app.add_subcommand("grad-check", "finite-difference check of analytic gradients");
  cmd_grad->add_option("--arch", arch, "architecture: D, X, or H");
  cmd_grad->add_flag("--corrupt", corrupt, "negative control: perturb analytic gradients")
      ->group("");

  CLI::App* cmd_overfit =
      app.add_subcommand("overfit", "train on the synthetic glyph corpus; prints a loss CSV");
  cmd_overfit->add_option("--arch", arch, "architecture: D, X, or H");
  cmd_overfit->add_option("--steps", steps, "max optimizer steps");
  cmd_overfit->add_option("--lr", lr, "learning rate");
  cmd_overfit->add_option("--threshold", threshold, "early-stop loss threshold");
  cmd_overfit->add_option("--stage", stage, "training stage: align or full");
  cmd_overfit->add_option("--examples", examples, "corpus size (1..64)");

  CLI::App* cmd_perf = app.add_subcommand("perf", "sequence-length and FLOP cost report");
  cmd_perf->add_flag("--bench", bench, "also run the wall-clock microbenchmark");
  cmd_perf->add_flag("--table", table, "print a text table instead of JSON");
  cmd_perf->add_option("--text-len", text_len, "text token count");
  cmd_perf->add_option("--tiles", tiles, "regular tile count (0 = text-only)");
  cmd_perf->add_option("--reps", reps, "benchmark repetitions (>= 3)");

  CLI::App* cmd_dump =
      app.add_subcommand("dump-config", "print the resolved config in canonical form");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  nvlm_ctx* raw = nullptr;
  if (nvlm_ctx_create(&raw) != NVLM_OK || !raw) {
    std::fprintf(stderr, "nvlm: cannot create context\n");
    return 1;
  }
  CtxPtr ctx(raw);

  // Precedence, lowest to highest: built-in defaults, NVLM_MICRO_SEED,
  // config files in order, then command-line flags.
  if (const char* env_seed = std::getenv("NVLM_MICRO_SEED"))
    if (int rc = set_opt(ctx.get(), "seed", env_seed)) return rc;
  for (const std::string& path : config_paths) {
    nvlm_status st = nvlm_load_config(ctx.get(), path.c_str());
    if (st != NVLM_OK) return complain(ctx.get(), st);
  }
  if (!seed.empty() && set_opt(ctx.get(), "seed", seed)) return 2;
  if (!arch.empty() && set_opt(ctx.get(), "model.arch", arch)) return 2;
  if (!tags.empty() && set_opt(ctx.get(), "model.tag_scheme", tags)) return 2;
  if (!steps.empty() && set_opt(ctx.get(), "train.max_steps", steps)) return 2;
  if (!lr.empty() && set_opt(ctx.get(), "train.lr", lr)) return 2;
  if (!threshold.empty() && set_opt(ctx.get(), "train.threshold", threshold)) return 2;
  if (!stage.empty() && set_opt(ctx.get(), "train.stage", stage)) return 2;
  if (!examples.empty() && set_opt(ctx.get(), "train.examples", examples)) return 2;
  if (!text_len.empty() && set_opt(ctx.get(), "bench.text_len", text_len)) return 2;
  if (!tiles.empty() && set_opt(ctx.get(), "bench.tiles", tiles)) return 2;
  if (!reps.empty() && set_opt(ctx.get(), "bench.reps", reps)) return 2;

  if (cmd_tile->parsed()) {
    char* manifest = nullptr;
    nvlm_status st = nvlm_tile_image(ctx.get(), image_path.c_str(),
                                     out_path.empty() ? nullptr : out_path.c_str(), &manifest);
    if (st != NVLM_OK) return complain(ctx.get(), st);
    return emit(take(manifest), "");
  }

  if (cmd_seq->parsed()) {
    std::ifstream f(example_path, std::ios::binary);
    if (!f) {
      std::fprintf(stderr, "nvlm: cannot read %s\n", example_path.c_str());
      return 2;
    }
    std::ostringstream buf;
    buf << f.rdbuf();
    char* record = nullptr;
    nvlm_status st = nvlm_build_sequence(ctx.get(), buf.str().c_str(), &record);
    if (st != NVLM_OK) return complain(ctx.get(), st);
    return emit(take(record) + "\n", out_path);
  }

  if (cmd_grad->parsed()) {
    char* report = nullptr;
    nvlm_status st = nvlm_grad_check(ctx.get(), corrupt ? 1 : 0, &report);
    // The per-group report is produced even when the check fails.
    std::string text = take(report);
    if (!text.empty() && emit(text, out_path)) return 2;
    if (st != NVLM_OK) return complain(ctx.get(), st);
    return 0;
  }

  if (cmd_overfit->parsed()) {
    char* csv = nullptr;
    double final_loss = 0.0;
    int reached = 0;
    nvlm_status st = nvlm_overfit(ctx.get(), &csv, &final_loss, &reached);
    if (st != NVLM_OK) return complain(ctx.get(), st);
    if (int rc = emit(take(csv), out_path)) return rc;
    std::fprintf(stderr, "final loss %.6g (threshold %s)\n", final_loss,
                 reached ? "reached" : "not reached");
    return 0;
  }

  if (cmd_perf->parsed()) {
    char* json = nullptr;
    char* tab = nullptr;
    nvlm_status st = nvlm_perf(ctx.get(), bench ? 1 : 0, &json, &tab);
    if (st != NVLM_OK) return complain(ctx.get(), st);
    std::string json_text = take(json);
    std::string tab_text = take(tab);
    return emit(table ? tab_text : json_text, out_path);
  }

  if (cmd_dump->parsed()) {
    char* text = nullptr;
    nvlm_status st = nvlm_dump_config(ctx.get(), &text);
    if (st != NVLM_OK) return complain(ctx.get(), st);
    return emit(take(text), out_path);
  }

  std::fprintf(stderr, "nvlm: no subcommand\n");
  return 2;
}
