// Copyright 2026  molex authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef MOLEX_CHECKPOINT_HPP_
#define MOLEX_CHECKPOINT_HPP_

#include <cstdint>
#include <string>

#include "encoder.hpp"

namespace molex {

// Little-endian binary: magic "MOLX", u32 version, length-prefixed canonical
// JSON architecture descriptor, u64 rng state, then the named f64 tensors in
// registry order, each with a trainable flag and shape header. Saving a
// loaded model reproduces the file byte for byte.

void save_checkpoint(const std::string& path, Encoder& enc, std::uint64_t rng_state);

Encoder load_checkpoint(const std::string& path, std::uint64_t* rng_state);

// Header only; does not materialize the model.
ModelConfig peek_checkpoint(const std::string& path);

}  // namespace molex

#endif  // MOLEX_CHECKPOINT_HPP_
