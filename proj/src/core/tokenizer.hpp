#pragma once

#include <map>
#include <string>
#include <vector>

namespace nvlm {

// Fixed special token ids; dynamic specials (tile tags) follow.
inline constexpr int kByteVocab = 256;
inline constexpr int kImStartId = 256;
inline constexpr int kImEndId = 257;
inline constexpr int kPadId = 258;
inline constexpr int kFirstDynamicId = 259;

inline constexpr const char* kImStartText = "<|im_start|>";
inline constexpr const char* kImEndText = "<|im_end|>";
inline constexpr const char* kPadText = "<pad>";

// Byte-level tokenizer: ids 0..255 are raw bytes, so encode/decode round-trips
// any byte string exactly. Specials (chat markers, tile tags) get single ids.
class Tokenizer {
 public:
  Tokenizer();

  // Raw bytes only; special strings inside `text` are NOT recognized here.
  std::vector<int> encode_bytes(const std::string& text) const;
  // Bytes map to themselves, specials to their display text.
  std::string decode(const std::vector<int>& ids) const;

  // Returns the existing id or registers a new one from kFirstDynamicId up.
  int intern_special(const std::string& text);
  int special_id(const std::string& text) const;  // fails if unregistered
  const std::string& special_text(int id) const;
  bool is_special(int id) const { return id >= kByteVocab && id < vocab_size(); }

  int vocab_size() const { return kFirstDynamicId + static_cast<int>(dynamic_.size()); }

 private:
  std::vector<std::string> dynamic_;   // id kFirstDynamicId + index
  std::map<std::string, int> by_text_;
};

}  // namespace nvlm
