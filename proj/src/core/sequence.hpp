#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tiler.hpp"
#include "core/tokenizer.hpp"
#include "core/vision.hpp"

namespace nvlm {

// How tiles announce themselves in the token stream.
enum class TagScheme { NoTag, OneD, TwoDGrid, TwoDBBox };

TagScheme tag_scheme_from_string(const std::string& s);
std::string to_string(TagScheme scheme);

// One string per regular tile (row-major), then one for the thumbnail when
// the layout has one. NoTag renders empty strings.
std::vector<std::string> render_tags(const TileLayout& lo, TagScheme scheme);

// Marks where image content lands inside the user turn. Without it, image
// content is inserted at the start of the user text followed by a newline.
inline constexpr const char* kImageMarker = "<image>";

// Lightweight stand-in for a projected TokenBlock: enough to lay out a
// sequence without running any model.
struct SlotSpec {
  int source = kThumbnail;  // tile index or kThumbnail
  int token_count = 0;
};

// Image content handed to the sequence builders: blocks row-major with the
// thumbnail last, and the tag strings in the same order.
struct ImageSlots {
  std::vector<SlotSpec> blocks;
  std::vector<std::string> tags;
};

struct ChatExample {
  std::string system = "You are a helpful assistant.";
  std::string user;
  std::string response;
};

struct SeqItem {
  enum class Kind { Token, ImageSlot };
  Kind kind = Kind::Token;
  int token = -1;      // Kind::Token
  int source = 0;      // Kind::ImageSlot
  int token_count = 0;  // Kind::ImageSlot

  static SeqItem tok(int id) { return {Kind::Token, id, 0, 0}; }
  static SeqItem slot(int source, int count) { return {Kind::ImageSlot, -1, source, count}; }
  int width() const { return kind == Kind::Token ? 1 : token_count; }
};

// Expanded-position span [begin, end) of one tile tag; tile is the regular
// tile index or kThumbnail.
struct TagSpan {
  int begin = 0;
  int end = 0;
  int tile = 0;
};

struct MultimodalSequence {
  std::vector<SeqItem> items;
  std::vector<std::uint8_t> loss_mask;  // aligned to expanded positions
  std::vector<TagSpan> tag_spans;       // tag positions in the expanded stream
  int decoder_len = 0;

  // Expanded token ids with image-slot positions filled by `slot_fill`.
  std::vector<int> expanded_ids(int slot_fill = kPadId) const;
};

// Decoder-only layout: every block (tiles then thumbnail) enters the decoder
// as tag + image slot at the image marker.
MultimodalSequence build_d_sequence(const ChatExample& ex, const ImageSlots& img, Tokenizer& tok);

// Cross-attention layout: only the tag tokens enter the decoder; image tokens
// stay on the cross-attention side. tag_spans drive the mask construction.
MultimodalSequence build_x_sequence(const ChatExample& ex, const ImageSlots& img, Tokenizer& tok);

// Hybrid layout: the thumbnail (or sole tile) enters the decoder; regular
// tiles go to cross-attention with their tag token ids.
struct HSequence {
  MultimodalSequence seq;
  std::vector<SlotSpec> kv_blocks;  // regular tiles, row-major
  std::vector<int> kv_tag_ids;      // same order; empty strings intern nothing
};
HSequence build_h_sequence(const ChatExample& ex, const ImageSlots& img, Tokenizer& tok);

// Single-line JSON record of a built sequence (JSONL-friendly).
std::string sequence_record_json(const MultimodalSequence& seq, const std::string& arch,
                                 const std::vector<int>& kv_tag_ids = {});

}  // namespace nvlm
