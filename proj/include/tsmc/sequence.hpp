#ifndef TSMC_SEQUENCE_HPP_
#define TSMC_SEQUENCE_HPP_

#include <span>
#include <string>
#include <vector>

#include "tsmc/errors.hpp"

namespace tsmc {

using TokenSpan = std::span<const int>;

// Dense token alphabet. Ids are [0, size); names are optional display labels.
struct Vocab {
  int size = 2;
  std::vector<std::string> names;

  void validate() const {
    if (size < 2) throw InputError("Vocab.size must be >= 2");
    if (!names.empty() && static_cast<int>(names.size()) != size)
      throw InputError("Vocab.names must have one entry per token id");
  }

  std::string name(int id) const {
    if (id < 0 || id >= size) throw InputError("token id out of range");
    if (!names.empty()) return names[id];
    return std::to_string(id);
  }

  int id_of(const std::string& name) const {
    for (int i = 0; i < static_cast<int>(names.size()); ++i)
      if (names[i] == name) return i;
    throw InputError("unknown token name: " + name);
  }
};

// Conditioning tokens plus the fixed generation length T.
struct Prompt {
  std::vector<int> tokens;
  int horizon = 1;

  void validate(const Vocab& vocab) const {
    if (horizon < 1) throw InputError("Prompt.horizon must be >= 1");
    for (int t : tokens)
      if (t < 0 || t >= vocab.size)
        throw InputError("prompt token id out of range");
  }
};

// A (possibly partial) generated continuation of a prompt. Complete when
// generated.size() == prompt.horizon.
struct Sequence {
  Prompt prompt;
  std::vector<int> generated;

  bool complete() const {
    return static_cast<int>(generated.size()) == prompt.horizon;
  }
  TokenSpan tokens() const { return generated; }
};

inline void check_tokens_in_range(TokenSpan tokens, int vocab_size) {
  for (int t : tokens)
    if (t < 0 || t >= vocab_size) throw InputError("token id out of range");
}

inline void check_complete(const Prompt& prompt, TokenSpan gen) {
  if (static_cast<int>(gen.size()) != prompt.horizon)
    throw InputError("sequence is not complete (length != horizon)");
}

}  // namespace tsmc

#endif  // TSMC_SEQUENCE_HPP_
