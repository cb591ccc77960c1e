#include "core/sequence.hpp"

#include <nlohmann/json.hpp>

#include "core/error.hpp"

namespace nvlm {

TagScheme tag_scheme_from_string(const std::string& s) {
  if (s == "none") return TagScheme::NoTag;
  if (s == "1d") return TagScheme::OneD;
  if (s == "2d-grid") return TagScheme::TwoDGrid;
  if (s == "2d-bbox") return TagScheme::TwoDBBox;
  fail(ErrorCode::InvalidArgument, "unknown tag scheme ", s,
       " (expected none, 1d, 2d-grid, or 2d-bbox)");
}

std::string to_string(TagScheme scheme) {
  switch (scheme) {
    case TagScheme::NoTag: return "none";
    case TagScheme::OneD: return "1d";
    case TagScheme::TwoDGrid: return "2d-grid";
    case TagScheme::TwoDBBox: return "2d-bbox";
  }
  fail(ErrorCode::Internal, "bad tag scheme value");
}

// OneD names only six tiles, so that scheme caps the tile count.
inline constexpr int kOneDCapacity = 6;

std::vector<std::string> render_tags(const TileLayout& lo, TagScheme scheme) {
  int tiles = lo.tile_count();
  if (scheme == TagScheme::OneD && tiles > kOneDCapacity)
    fail(ErrorCode::InvalidArgument, "1d tag scheme names at most ", kOneDCapacity, " tiles, got ",
         tiles);
  std::vector<std::string> tags;
  tags.reserve(static_cast<std::size_t>(lo.block_count()));
  for (int i = 0; i < tiles; ++i) {
    switch (scheme) {
      case TagScheme::NoTag:
        tags.emplace_back();
        break;
      case TagScheme::OneD:
        tags.push_back("<tile_" + std::to_string(i + 1) + ">");
        break;
      case TagScheme::TwoDGrid: {
        int col = i % lo.ratio.cols + 1;
        int row = i / lo.ratio.cols + 1;
        tags.push_back("<tile_x" + std::to_string(col) + "_y" + std::to_string(row) + ">");
        break;
      }
      case TagScheme::TwoDBBox: {
        const PixelBox& b = lo.tile_boxes[static_cast<std::size_t>(i)];
        tags.push_back("<box> (" + std::to_string(b.left) + ", " + std::to_string(b.top) + "), (" +
                       std::to_string(b.right) + ", " + std::to_string(b.bottom) + ") </box>");
        break;
      }
    }
  }
  if (lo.has_thumbnail)
    tags.push_back(scheme == TagScheme::NoTag ? std::string() : std::string("<tile_global>"));
  return tags;
}

namespace {

// Accumulates items while tracking the expanded position for spans and masks.
struct SeqWriter {
  Tokenizer& tok;
  MultimodalSequence seq;
  int pos = 0;

  void token(int id, bool in_loss) {
    seq.items.push_back(SeqItem::tok(id));
    seq.loss_mask.push_back(in_loss ? 1 : 0);
    ++pos;
  }
  void text(const std::string& s, bool in_loss) {
    for (int id : tok.encode_bytes(s)) token(id, in_loss);
  }
  void tag(const std::string& text, int tile) {
    if (text.empty()) return;
    int id = tok.intern_special(text);
    seq.tag_spans.push_back(TagSpan{pos, pos + 1, tile});
    token(id, false);
  }
  void slot(const SlotSpec& s) {
    if (s.token_count <= 0)
      fail(ErrorCode::InvalidArgument, "image slot with non-positive token count");
    seq.items.push_back(SeqItem::slot(s.source, s.token_count));
    seq.loss_mask.insert(seq.loss_mask.end(), static_cast<std::size_t>(s.token_count), 0);
    pos += s.token_count;
  }
  MultimodalSequence finish() {
    seq.decoder_len = pos;
    return std::move(seq);
  }
};

struct UserSplit {
  std::string pre, post;
};

UserSplit split_user(const std::string& user, bool has_image) {
  auto p = user.find(kImageMarker);
  if (p == std::string::npos) {
    if (has_image) return {"", "\n" + user};  // default: image first, own line
    return {user, ""};
  }
  if (!has_image)
    fail(ErrorCode::InvalidArgument, "prompt contains ", kImageMarker, " but no image was given");
  std::string pre = user.substr(0, p);
  std::string post = user.substr(p + std::string(kImageMarker).size());
  if (post.find(kImageMarker) != std::string::npos)
    fail(ErrorCode::InvalidArgument, "prompt contains more than one ", kImageMarker);
  return {pre, post};
}

void validate_slots(const ImageSlots& img) {
  if (img.blocks.size() != img.tags.size())
    fail(ErrorCode::InvalidArgument, "got ", img.blocks.size(), " image blocks but ",
         img.tags.size(), " tags");
  bool some_empty = false, some_filled = false;
  for (const std::string& t : img.tags) (t.empty() ? some_empty : some_filled) = true;
  if (some_empty && some_filled)
    fail(ErrorCode::InvalidArgument, "mixed empty and non-empty tile tags");
  for (std::size_t i = 0; i < img.blocks.size(); ++i) {
    int src = img.blocks[i].source;
    bool last = i + 1 == img.blocks.size();
    if (src == kThumbnail && !last)
      fail(ErrorCode::InvalidArgument, "thumbnail block must come last");
    if (src != kThumbnail && src != static_cast<int>(i))
      fail(ErrorCode::InvalidArgument, "tile blocks must be ordered row-major");
  }
}

// Shared chat scaffold; `image_group` runs inside the user turn.
template <typename Fn>
MultimodalSequence build_chat(const ChatExample& ex, bool has_image, Tokenizer& tok,
                              Fn&& image_group) {
  SeqWriter w{tok, {}};
  w.token(kImStartId, false);
  w.text("system\n" + ex.system, false);
  w.token(kImEndId, false);
  w.text("\n", false);

  UserSplit split = split_user(ex.user, has_image);
  w.token(kImStartId, false);
  w.text("user\n" + split.pre, false);
  image_group(w);
  w.text(split.post, false);
  w.token(kImEndId, false);
  w.text("\n", false);

  w.token(kImStartId, false);
  w.text("assistant\n", false);
  w.text(ex.response, true);
  w.token(kImEndId, true);
  return w.finish();
}

}  // namespace

MultimodalSequence build_d_sequence(const ChatExample& ex, const ImageSlots& img, Tokenizer& tok) {
  validate_slots(img);
  return build_chat(ex, !img.blocks.empty(), tok, [&](SeqWriter& w) {
    for (std::size_t i = 0; i < img.blocks.size(); ++i) {
      w.tag(img.tags[i], img.blocks[i].source);
      w.slot(img.blocks[i]);
    }
  });
}

MultimodalSequence build_x_sequence(const ChatExample& ex, const ImageSlots& img, Tokenizer& tok) {
  validate_slots(img);
  return build_chat(ex, !img.blocks.empty(), tok, [&](SeqWriter& w) {
    for (std::size_t i = 0; i < img.blocks.size(); ++i)
      w.tag(img.tags[i], img.blocks[i].source);
  });
}

HSequence build_h_sequence(const ChatExample& ex, const ImageSlots& img, Tokenizer& tok) {
  validate_slots(img);
  HSequence out;
  std::size_t decoder_block = img.blocks.size();  // index of the block shown to the decoder
  if (img.blocks.size() == 1) {
    decoder_block = 0;  // sole tile doubles as the whole-image view
  } else if (!img.blocks.empty()) {
    if (img.blocks.back().source != kThumbnail)
      fail(ErrorCode::InvalidArgument,
           "hybrid decoder needs a thumbnail block when several tiles are present");
    decoder_block = img.blocks.size() - 1;
    for (std::size_t i = 0; i + 1 < img.blocks.size(); ++i) {
      out.kv_blocks.push_back(img.blocks[i]);
      if (!img.tags[i].empty()) out.kv_tag_ids.push_back(tok.intern_special(img.tags[i]));
    }
  }
  out.seq = build_chat(ex, !img.blocks.empty(), tok, [&](SeqWriter& w) {
    if (decoder_block < img.blocks.size()) {
      w.tag(img.tags[decoder_block], img.blocks[decoder_block].source);
      w.slot(img.blocks[decoder_block]);
    }
  });
  return out;
}

std::vector<int> MultimodalSequence::expanded_ids(int slot_fill) const {
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(decoder_len));
  for (const SeqItem& it : items) {
    if (it.kind == SeqItem::Kind::Token)
      ids.push_back(it.token);
    else
      ids.insert(ids.end(), static_cast<std::size_t>(it.token_count), slot_fill);
  }
  return ids;
}

std::string sequence_record_json(const MultimodalSequence& seq, const std::string& arch,
                                 const std::vector<int>& kv_tag_ids) {
  nlohmann::json rec;
  rec["arch"] = arch;
  rec["decoder_len"] = seq.decoder_len;
  nlohmann::json items = nlohmann::json::array();
  for (const SeqItem& it : seq.items) {
    if (it.kind == SeqItem::Kind::Token)
      items.push_back({{"token", it.token}});
    else
      items.push_back({{"source", it.source}, {"tokens", it.token_count}});
  }
  rec["items"] = std::move(items);
  rec["loss_mask"] = seq.loss_mask;
  nlohmann::json spans = nlohmann::json::array();
  for (const TagSpan& s : seq.tag_spans)
    spans.push_back({{"begin", s.begin}, {"end", s.end}, {"tile", s.tile}});
  rec["tag_spans"] = std::move(spans);
  rec["kv_tags"] = kv_tag_ids;
  return rec.dump();
}

}  // namespace nvlm
