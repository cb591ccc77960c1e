#include "core/assembly.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <utility>

#include "core/error.hpp"

namespace nvlm {

Arch arch_from_string(const std::string& s) {
  if (s == "D" || s == "d") return Arch::D;
  if (s == "X" || s == "x") return Arch::X;
  if (s == "H" || s == "h") return Arch::H;
  fail(ErrorCode::InvalidArgument, "unknown architecture ", s, " (expected D, X, or H)");
}

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::D: return "D";
    case Arch::X: return "X";
    case Arch::H: return "H";
  }
  fail(ErrorCode::Internal, "bad arch value");
}

ModelConfig ModelConfig::toy(Arch arch, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.encoder.seed = seed;
  cfg.decoder.seed = seed;
  if (arch != Arch::D) {
    cfg.decoder.xattn_every = 2;
    cfg.decoder.n_xattn = 2;
  }
  return cfg;
}

void ModelConfig::validate() const {
  decoder.validate();
  encoder.validate();
  if (shuffle_factor < 1 || encoder.grid() % shuffle_factor != 0)
    fail(ErrorCode::InvalidArgument, "shuffle factor ", shuffle_factor,
         " does not divide the encoder grid ", encoder.grid());
  int side = encoder.grid() / shuffle_factor;
  if (side * side != decoder.tokens_per_tile)
    fail(ErrorCode::InvalidArgument, "encoder yields ", side * side,
         " tokens per tile after shuffling, decoder expects ", decoder.tokens_per_tile);
  if (arch == Arch::D && decoder.has_xattn())
    fail(ErrorCode::InvalidArgument, "decoder-only architecture cannot have x-attn layers");
  if (arch != Arch::D && !decoder.has_xattn())
    fail(ErrorCode::InvalidArgument, to_string(arch), " architecture needs x-attn layers");
}

PlanResult plan_sequence(const PlanRequest& req, Tokenizer& tok) {
  PlanResult out;
  ImageSlots img;
  if (req.image_width > 0 && req.image_height > 0) {
    out.has_image = true;
    out.layout = layout(req.image_width, req.image_height, RatioSet::with_max_tiles(req.max_tiles),
                        req.tile_size, req.thumbnail);
    img.tags = render_tags(out.layout, req.scheme);
    for (int i = 0; i < out.layout.tile_count(); ++i)
      img.blocks.push_back({i, req.tokens_per_tile});
    if (out.layout.has_thumbnail) img.blocks.push_back({kThumbnail, req.tokens_per_tile});
  }
  switch (req.arch) {
    case Arch::D:
      out.seq = build_d_sequence(req.chat, img, tok);
      break;
    case Arch::X:
      out.seq = build_x_sequence(req.chat, img, tok);
      out.kv_blocks = img.blocks;
      out.kv_len = static_cast<int>(img.blocks.size()) * req.tokens_per_tile;
      break;
    case Arch::H: {
      HSequence h = build_h_sequence(req.chat, img, tok);
      out.seq = std::move(h.seq);
      out.kv_blocks = std::move(h.kv_blocks);
      out.kv_tag_ids = std::move(h.kv_tag_ids);
      int per_block = req.tokens_per_tile + (out.kv_tag_ids.empty() ? 0 : 1);
      out.kv_len = static_cast<int>(out.kv_blocks.size()) * per_block;
      break;
    }
  }
  return out;
}

ModelInstance::ModelInstance(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  vision_.emplace(cfg_.encoder, ps_);
  decoder_.emplace(cfg_.decoder, ps_);
  int pc = cfg_.post_shuffle_channels();
  std::uint64_t seed = cfg_.decoder.seed;
  // D and H share the two-layer MLP for every image block; X reads vision
  // tokens through a single affine map on the cross-attention side.
  if (cfg_.arch != Arch::X) {
    ps_.create_normal("proj_d.w1", {pc, cfg_.proj_hidden}, 0.02, seed);
    ps_.create("proj_d.b1", {cfg_.proj_hidden});
    ps_.create_normal("proj_d.w2", {cfg_.proj_hidden, cfg_.decoder.d_model}, 0.02, seed);
    ps_.create("proj_d.b2", {cfg_.decoder.d_model});
  } else {
    ps_.create_normal("proj_x.w", {pc, cfg_.decoder.d_model}, 0.02, seed);
    ps_.create("proj_x.b", {cfg_.decoder.d_model});
  }
}

namespace {

std::uint64_t image_hash(const Image& img) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  int dims[3] = {img.width, img.height, img.channels};
  mix(dims, sizeof dims);
  mix(img.pixels.data(), img.pixels.size() * sizeof(double));
  return h;
}

}  // namespace

const ModelInstance::EncodedImage& ModelInstance::encoded(const Image& img) {
  std::uint64_t key = image_hash(img);
  auto it = encode_cache_.find(key);
  if (it != encode_cache_.end()) return it->second;

  EncodedImage e;
  e.layout = layout(img.width, img.height, RatioSet::with_max_tiles(cfg_.decoder.max_tiles),
                    cfg_.encoder.tile_size);
  CutTiles ct = cut(img, e.layout);
  for (std::size_t i = 0; i < ct.tiles.size(); ++i)
    e.blocks.push_back(
        pixel_shuffle(vision_->encode(ct.tiles[i], static_cast<int>(i)), cfg_.shuffle_factor));
  if (ct.thumbnail)
    e.blocks.push_back(pixel_shuffle(vision_->encode(*ct.thumbnail, kThumbnail),
                                     cfg_.shuffle_factor));
  return encode_cache_.emplace(key, std::move(e)).first->second;
}

PlanRequest ModelInstance::request_for(const TrainingExample& ex) const {
  PlanRequest req;
  req.arch = cfg_.arch;
  req.scheme = cfg_.tag_scheme;
  req.chat = ChatExample{ex.system, ex.prompt, ex.response};
  if (ex.image) {
    req.image_width = ex.image->width;
    req.image_height = ex.image->height;
  }
  req.tile_size = cfg_.encoder.tile_size;
  req.max_tiles = cfg_.decoder.max_tiles;
  req.tokens_per_tile = cfg_.decoder.tokens_per_tile;
  return req;
}

PlanResult ModelInstance::plan(const TrainingExample& ex) {
  return plan_sequence(request_for(ex), tok_);
}

ModelInstance::ForwardOutput ModelInstance::forward(Graph& g, GraphBinder& b,
                                                    const TrainingExample& ex) {
  if (ex.response.empty()) fail(ErrorCode::InvalidArgument, "training example has no response");
  PlanResult plan = plan_sequence(request_for(ex), tok_);
  const EncodedImage* enc = plan.has_image ? &encoded(*ex.image) : nullptr;

  auto block_data = [&](int source) -> const Tensor& {
    for (const TokenBlock& tb : enc->blocks)
      if (tb.source == source) return tb.data;
    fail(ErrorCode::Internal, "no encoded block for source ", source);
  };
  auto project_decoder_block = [&](int source) {
    ProjectorD pd{b["proj_d.w1"], b["proj_d.b1"], b["proj_d.w2"], b["proj_d.b2"]};
    return project_d(g, g.leaf(block_data(source)), pd);
  };

  // Decoder input: token runs with projected blocks spliced at their slots.
  std::vector<EmbedSegment> segs;
  std::vector<int> run;
  for (const SeqItem& item : plan.seq.items) {
    if (item.kind == SeqItem::Kind::Token) {
      run.push_back(item.token);
      continue;
    }
    if (!run.empty()) {
      segs.push_back(EmbedSegment::tokens(std::move(run)));
      run.clear();
    }
    segs.push_back(EmbedSegment::vision(project_decoder_block(item.source)));
  }
  if (!run.empty()) segs.push_back(EmbedSegment::tokens(std::move(run)));
  NodeId embeds = decoder_->embed_segments(g, b, segs);

  auto project_kv_block = [&](int source) {
    if (cfg_.arch == Arch::X) {
      ProjectorX px{b["proj_x.w"], b["proj_x.b"]};
      return project_x(g, g.leaf(block_data(source)), px);
    }
    return project_decoder_block(source);
  };

  // Cross-attention side.
  BoolMatrix mask;
  XAttnInput xin;
  bool use_xattn = false;
  if (!plan.kv_blocks.empty()) {
    std::vector<NodeId> kv_parts;
    for (std::size_t i = 0; i < plan.kv_blocks.size(); ++i) {
      NodeId tile = project_kv_block(plan.kv_blocks[i].source);
      if (!plan.kv_tag_ids.empty()) {
        NodeId tag_row = g.embed_rows(b["decoder.tok_embed"], {plan.kv_tag_ids[i]});
        tile = g.concat_rows({tag_row, tile});
      }
      kv_parts.push_back(tile);
    }
    NodeId kv = kv_parts.size() == 1 ? kv_parts.front() : g.concat_rows(kv_parts);
    if (cfg_.arch == Arch::X) {
      mask = build_x_mask(plan.seq.decoder_len, static_cast<int>(plan.kv_blocks.size()),
                          cfg_.decoder.tokens_per_tile, plan.seq.tag_spans);
    } else {
      mask = BoolMatrix(plan.seq.decoder_len, plan.kv_len, true);
    }
    xin = XAttnInput{kv, &mask};
    use_xattn = true;
  }

  ForwardOutput out;
  out.decoder_len = plan.seq.decoder_len;
  out.logits = decoder_->forward_embeds(g, b, embeds, use_xattn ? &xin : nullptr);

  // Next-token objective: position t predicts token t+1, so masks shift.
  std::vector<int> ids = plan.seq.expanded_ids(kPadId);
  int len = plan.seq.decoder_len;
  std::vector<int> targets(static_cast<std::size_t>(len), kPadId);
  std::vector<std::uint8_t> tmask(static_cast<std::size_t>(len), 0);
  for (int t = 0; t + 1 < len; ++t) {
    targets[static_cast<std::size_t>(t)] = ids[static_cast<std::size_t>(t) + 1];
    tmask[static_cast<std::size_t>(t)] = plan.seq.loss_mask[static_cast<std::size_t>(t) + 1];
  }
  out.loss = g.cross_entropy(out.logits, targets, tmask);
  return out;
}

double ModelInstance::loss_of(const TrainingExample& ex) {
  Graph g;
  GraphBinder b(g, ps_);
  return g.value(forward(g, b, ex).loss).data()[0];
}

void ModelInstance::set_stage(TrainStage stage) {
  ps_.set_trainable_prefix("vision.", false);
  ps_.set_trainable_prefix("decoder.", stage == TrainStage::Full);
  if (ps_.contains("proj_d.w1")) ps_.set_trainable_prefix("proj_d.", true);
  if (ps_.contains("proj_x.w")) ps_.set_trainable_prefix("proj_x.", true);
  if (cfg_.decoder.has_xattn()) ps_.set_trainable_prefix("xattn.", true);
}

void AdamW::step(ParamStore& ps, const Graph& g, const std::map<std::string, NodeId>& bound) {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, node] : bound) {
    if (!ps.trainable(name) || !g.has_grad(node)) continue;
    Tensor& p = ps.get(name);
    const Tensor& gr = g.grad(node);
    Moments& mo = moments_[name];
    if (mo.m.numel() == 0) {
      mo.m = Tensor::zeros(p.shape());
      mo.v = Tensor::zeros(p.shape());
    }
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * gr[i];
      mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * gr[i] * gr[i];
      double m_hat = mo.m[i] / bc1;
      double v_hat = mo.v[i] / bc2;
      p[i] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * p[i]);
    }
  }
}

double train_step(ModelInstance& model, const std::vector<TrainingExample>& batch, AdamW& opt) {
  if (batch.empty()) fail(ErrorCode::InvalidArgument, "empty training batch");
  Graph g;
  GraphBinder b(g, model.params());
  NodeId total = -1;
  for (const TrainingExample& ex : batch) {
    NodeId loss = model.forward(g, b, ex).loss;
    total = total < 0 ? loss : g.add(total, loss);
  }
  NodeId mean = g.scale(total, 1.0 / static_cast<double>(batch.size()));
  g.backward(mean);
  opt.step(model.params(), g, b.bound());
  return g.value(mean).data()[0];
}

namespace {

// Eight visually distinct 8x8 bitmaps; glyph k answers to the letter 'A'+k.
constexpr std::array<std::array<std::uint8_t, 8>, 8> kGlyphs = {{
    {0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF},  // A solid
    {0xAA, 0xAA, 0xAA, 0xAA, 0xAA, 0xAA, 0xAA, 0xAA},  // B vertical stripes
    {0xFF, 0x00, 0xFF, 0x00, 0xFF, 0x00, 0xFF, 0x00},  // C horizontal stripes
    {0xAA, 0x55, 0xAA, 0x55, 0xAA, 0x55, 0xAA, 0x55},  // D checkerboard
    {0xF0, 0xF0, 0xF0, 0xF0, 0xF0, 0xF0, 0xF0, 0xF0},  // E left half
    {0xFF, 0xFF, 0xFF, 0xFF, 0x00, 0x00, 0x00, 0x00},  // F top half
    {0x80, 0x40, 0x20, 0x10, 0x08, 0x04, 0x02, 0x01},  // G diagonal
    {0xFF, 0x81, 0x81, 0x81, 0x81, 0x81, 0x81, 0xFF},  // H box
}};

void render_glyph(Image& img, int glyph, int cell_x, int cell_y, int cell_size) {
  const auto& rows = kGlyphs[static_cast<std::size_t>(glyph)];
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      if (!((rows[static_cast<std::size_t>(y)] >> (7 - x)) & 1)) continue;
      for (int c = 0; c < img.channels; ++c)
        img.at(cell_x * cell_size + x, cell_y * cell_size + y, c) = 255.0;
    }
}

}  // namespace

std::vector<TrainingExample> synthetic_ocr_corpus(int count, const EncoderConfig& enc,
                                                  std::uint64_t seed) {
  if (count <= 0) fail(ErrorCode::InvalidArgument, "corpus size must be positive");
  if (enc.patch_size != 8)
    fail(ErrorCode::InvalidArgument, "glyphs are 8x8 and must fill one patch, got patch size ",
         enc.patch_size);
  int cells = enc.tile_size / enc.patch_size;
  int glyphs_per_example = std::min(3, cells);
  Rng rng(seed);
  std::vector<TrainingExample> corpus;
  corpus.reserve(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) {
    Image img(enc.tile_size, enc.tile_size, enc.in_channels);
    std::string word;
    for (int k = 0; k < glyphs_per_example; ++k) {
      int glyph = rng.next_int(0, static_cast<int>(kGlyphs.size()) - 1);
      word.push_back(static_cast<char>('A' + glyph));
      render_glyph(img, glyph, k, 1 % cells, enc.patch_size);
    }
    TrainingExample ex;
    ex.image = std::move(img);
    ex.prompt = std::string("Read the glyphs in ") + kImageMarker + ".";
    ex.response = word;
    corpus.push_back(std::move(ex));
  }
  return corpus;
}

OverfitResult overfit_harness(ModelInstance& model, const std::vector<TrainingExample>& corpus,
                              const OverfitConfig& cfg) {
  if (corpus.empty()) fail(ErrorCode::InvalidArgument, "empty corpus");
  if (corpus.size() > 64)
    fail(ErrorCode::InvalidArgument, "corpus of ", corpus.size(), " exceeds the 64-example cap");
  model.set_stage(cfg.stage);

  OverfitResult res;
  if (cfg.max_steps <= 0) {
    double total = 0.0;
    for (const TrainingExample& ex : corpus) total += model.loss_of(ex);
    res.final_loss = total / static_cast<double>(corpus.size());
    res.losses.push_back(res.final_loss);
    return res;
  }

  AdamW opt(cfg.optimizer);
  for (int step = 0; step < cfg.max_steps; ++step) {
    double loss = train_step(model, corpus, opt);
    res.losses.push_back(loss);
    res.steps_run = step + 1;
    res.final_loss = loss;
    if (loss < cfg.threshold) {
      res.reached = true;
      break;
    }
  }
  return res;
}

std::string overfit_losses_csv(const OverfitResult& res) {
  std::string out = "step,loss\n";
  char line[64];
  for (std::size_t i = 0; i < res.losses.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.17g\n", i, res.losses[i]);
    out += line;
  }
  return out;
}

}  // namespace nvlm
