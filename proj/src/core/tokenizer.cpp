#include "core/tokenizer.hpp"

#include "core/error.hpp"

namespace nvlm {

Tokenizer::Tokenizer() {
  by_text_[kImStartText] = kImStartId;
  by_text_[kImEndText] = kImEndId;
  by_text_[kPadText] = kPadId;
}

std::vector<int> Tokenizer::encode_bytes(const std::string& text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id >= 0 && id < kByteVocab)
      out.push_back(static_cast<char>(id));
    else
      out += special_text(id);
  }
  return out;
}

int Tokenizer::intern_special(const std::string& text) {
  if (text.empty()) fail(ErrorCode::InvalidArgument, "special token text is empty");
  auto it = by_text_.find(text);
  if (it != by_text_.end()) return it->second;
  int id = vocab_size();
  dynamic_.push_back(text);
  by_text_[text] = id;
  return id;
}

int Tokenizer::special_id(const std::string& text) const {
  auto it = by_text_.find(text);
  if (it == by_text_.end()) fail(ErrorCode::InvalidArgument, "unknown special token ", text);
  return it->second;
}

const std::string& Tokenizer::special_text(int id) const {
  switch (id) {
    case kImStartId: {
      static const std::string s = kImStartText;
      return s;
    }
    case kImEndId: {
      static const std::string s = kImEndText;
      return s;
    }
    case kPadId: {
      static const std::string s = kPadText;
      return s;
    }
    default: {
      int i = id - kFirstDynamicId;
      if (i < 0 || i >= static_cast<int>(dynamic_.size()))
        fail(ErrorCode::InvalidArgument, "token id ", id, " is not a special token");
      return dynamic_[static_cast<std::size_t>(i)];
    }
  }
}

}  // namespace nvlm
