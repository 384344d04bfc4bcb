/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vdg/corpus.hpp"

namespace vdg {

// Symbolic scenes of colored shapes on a patch grid, with a templated
// caption and question/answer turns that refer back to the shapes.
//
// Feature channels per patch: red, blue, green, yellow, square, circle,
// triangle, objectness.
inline constexpr int kSynthChannels = 8;

struct SynthConfig {
  uint64_t seed = 7;
  int train = 200;
  int dev = 50;
  int test = 50;
  // 0: every pronoun follows a question about a single named object.
  // 1: questions name two objects and "it" may refer to either, so only the
  //    coreference chain tells them apart; every tenth scene holds two
  //    identical shapes told apart by "on the left" / "on the right".
  // 2: as 1, with more identical pairs, some described jointly ("two red
  //    squares" ... "they").
  int ambiguity = 1;
  int image_size = 256;
  int grid = 8;
};

struct SceneObject {
  int color = 0;
  int shape = 0;
  int col = 0, row = 0;  // top-left patch
  int cols = 0, rows = 0;
};

/// One datapoint of a split; pure function of (config, split, index).
DataPoint generate_datapoint(const SynthConfig& config, const std::string& split, int index);

std::vector<DataPoint> generate_split(const SynthConfig& config, const std::string& split,
                                      int count);

/// train/dev/test splits with the configured sizes.
Corpus generate_corpus(const SynthConfig& config);

/// `n` datapoints in the train split; dev and test are empty.
Corpus generate_corpus(uint64_t seed, int n, int ambiguity);

}  // namespace vdg
