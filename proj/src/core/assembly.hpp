#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/decoder.hpp"
#include "core/sequence.hpp"
#include "core/tiler.hpp"
#include "core/vision.hpp"

namespace nvlm {

enum class Arch { D, X, H };

Arch arch_from_string(const std::string& s);
std::string to_string(Arch arch);

struct ModelConfig {
  Arch arch = Arch::D;
  ArchConfig decoder;
  EncoderConfig encoder;
  TagScheme tag_scheme = TagScheme::OneD;
  int shuffle_factor = 2;
  int proj_hidden = 48;

  // Toy preset: D runs without x-attn layers, X and H with one every two
  // self-attention blocks.
  static ModelConfig toy(Arch arch, std::uint64_t seed = kDefaultSeed);
  void validate() const;
  int post_shuffle_channels() const {
    return encoder.embed_dim * shuffle_factor * shuffle_factor;
  }
};

struct TrainingExample {
  std::optional<Image> image;
  std::string prompt;  // user text, may contain the image marker
  std::string response;
  std::string system = "You are a helpful assistant.";
};

// Tensor-free sequence layout: enough to reason about decoder and kv lengths
// at any scale without running a model.
struct PlanRequest {
  Arch arch = Arch::D;
  TagScheme scheme = TagScheme::OneD;
  ChatExample chat;
  int image_width = 0;  // 0 means text-only
  int image_height = 0;
  int tile_size = 448;
  int max_tiles = 6;
  int tokens_per_tile = 256;
  ThumbnailPolicy thumbnail = ThumbnailPolicy::Auto;
};

struct PlanResult {
  MultimodalSequence seq;
  std::vector<SlotSpec> kv_blocks;  // cross-attention side (X and H)
  std::vector<int> kv_tag_ids;      // H: tag embedding ids, one per kv block
  int kv_len = 0;
  bool has_image = false;
  TileLayout layout;  // valid when has_image
};

PlanResult plan_sequence(const PlanRequest& req, Tokenizer& tok);

enum class TrainStage { Alignment, Full };

class ModelInstance {
 public:
  explicit ModelInstance(const ModelConfig& cfg);

  struct ForwardOutput {
    NodeId logits = -1;
    NodeId loss = -1;
    int decoder_len = 0;
  };
  // Builds the full multimodal forward for one example inside g. The loss is
  // mean next-token cross-entropy over response positions.
  ForwardOutput forward(Graph& g, GraphBinder& b, const TrainingExample& ex);

  // Fresh-graph convenience: forward only, returns the loss value.
  double loss_of(const TrainingExample& ex);

  PlanResult plan(const TrainingExample& ex);

  // Alignment stage trains projectors and x-attn layers only; Full unfreezes
  // the decoder backbone. The vision encoder stays frozen in both.
  void set_stage(TrainStage stage);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  Tokenizer& tokenizer() { return tok_; }

 private:
  struct EncodedImage {
    TileLayout layout;
    std::vector<TokenBlock> blocks;  // shuffled, tiles row-major then thumbnail
  };
  const EncodedImage& encoded(const Image& img);
  PlanRequest request_for(const TrainingExample& ex) const;

  ModelConfig cfg_;
  ParamStore ps_;
  Tokenizer tok_;
  std::optional<VisionEncoder> vision_;
  std::optional<DecoderModel> decoder_;
  std::map<std::uint64_t, EncodedImage> encode_cache_;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled-weight-decay Adam over the trainable subset of a store. Moment
// state is keyed by parameter name and survives across graphs.
class AdamW {
 public:
  explicit AdamW(const AdamWConfig& cfg) : cfg_(cfg) {}

  void step(ParamStore& ps, const Graph& g, const std::map<std::string, NodeId>& bound);
  const AdamWConfig& config() const { return cfg_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  AdamWConfig cfg_;
  std::map<std::string, Moments> moments_;
  std::int64_t t_ = 0;
};

// One optimizer step over the mean of per-example losses. Returns that loss.
double train_step(ModelInstance& model, const std::vector<TrainingExample>& batch, AdamW& opt);

// Deterministic OCR-style corpus: each example shows a few 8x8 glyphs on a
// blank tile and asks for the glyph string.
std::vector<TrainingExample> synthetic_ocr_corpus(int count, const EncoderConfig& enc,
                                                  std::uint64_t seed);

struct OverfitConfig {
  int max_steps = 2000;
  double threshold = 0.05;
  AdamWConfig optimizer;
  TrainStage stage = TrainStage::Full;
  int examples = 32;  // synthetic corpus size for callers that build one
};

struct OverfitResult {
  std::vector<double> losses;  // batch loss before each step
  double final_loss = 0.0;
  int steps_run = 0;
  bool reached = false;
};

OverfitResult overfit_harness(ModelInstance& model, const std::vector<TrainingExample>& corpus,
                              const OverfitConfig& cfg);

// "step,loss" rows, one per recorded batch loss.
std::string overfit_losses_csv(const OverfitResult& res);

}  // namespace nvlm
