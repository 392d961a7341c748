#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "smoe/error.hpp"

namespace smoe {

// Byte-level tokenizer: ids 0..255 are raw bytes, followed by BOS and EOS.
// Suits toy runs; model vocab_size stays independently configurable and must
// only be >= vocab_size() when this tokenizer feeds a model.
class ByteTokenizer {
 public:
  static constexpr int kBos = 256;
  static constexpr int kEos = 257;

  static constexpr int vocab_size() { return 258; }

  std::vector<int> encode(std::string_view text, bool add_bos = false,
                          bool add_eos = false) const {
    std::vector<int> ids;
    ids.reserve(text.size() + 2);
    if (add_bos) ids.push_back(kBos);
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    if (add_eos) ids.push_back(kEos);
    return ids;
  }

  // Specials are dropped on decode.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
      if (id < 0 || id >= vocab_size()) throw DataError("ByteTokenizer: id out of range");
      if (id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
  }
};

}  // namespace smoe
