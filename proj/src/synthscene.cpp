/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/synthscene.hpp"

#include <algorithm>
#include <array>
#include <cstdio>

#include "vdg/error.hpp"
#include "vdg/nn.hpp"

namespace vdg {

namespace {

constexpr std::array<const char*, 4> kColors{"red", "blue", "green", "yellow"};
constexpr std::array<const char*, 3> kShapes{"square", "circle", "triangle"};
constexpr std::array<const char*, 3> kPlurals{"squares", "circles", "triangles"};
constexpr std::array<const char*, 4> kAdjectives{"nice", "visible", "clear", "pretty"};
constexpr int kMaxTokens = 64;

uint64_t splitmix(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// A thing the text talks about: one object, or an identical pair named
// together.
struct Entity {
  std::vector<int> objects;
  int side = 0;  // -1 left twin, +1 right twin, 0 unique
  bool plural() const { return objects.size() > 1; }
};

struct TextBuilder {
  std::vector<std::string> caption;
  std::vector<Turn> turns;
  int total = 0;
  std::vector<std::pair<Span, int>> mention_spans;  // span, entity
  std::vector<MentionKind> mention_kinds;

  // Appends words to `out`, returning their span in the flattened tokens.
  Span append(std::vector<std::string>& out, const std::vector<std::string>& words) {
    const Span s{total, total + static_cast<int>(words.size())};
    out.insert(out.end(), words.begin(), words.end());
    total += static_cast<int>(words.size());
    return s;
  }
  void mention(std::vector<std::string>& out, const std::vector<std::string>& words,
               int entity, MentionKind kind) {
    mention_spans.emplace_back(append(out, words), entity);
    mention_kinds.push_back(kind);
  }
};

std::vector<std::string> noun_phrase(const Entity& e, const std::vector<SceneObject>& objs,
                                     bool definite) {
  const SceneObject& o = objs[e.objects.front()];
  if (e.plural()) {
    if (definite) return {"the", kColors[o.color], kPlurals[o.shape]};
    return {"two", kColors[o.color], kPlurals[o.shape]};
  }
  std::vector<std::string> words{definite ? "the" : "a", kColors[o.color], kShapes[o.shape]};
  if (e.side != 0) {
    words.insert(words.end(), {"on", "the", e.side < 0 ? "left" : "right"});
  }
  return words;
}

// Places an object of random size inside columns [col_lo, col_hi) without
// touching occupied patches. Returns false after repeated failures.
bool place(SceneObject& obj, std::vector<char>& occupied, int grid, int col_lo, int col_hi,
           nn::Rng& rng) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    obj.cols = 2 + static_cast<int>(rng.below(2));
    obj.rows = 2 + static_cast<int>(rng.below(2));
    const int col_span = col_hi - col_lo - obj.cols + 1;
    const int row_span = grid - obj.rows + 1;
    if (col_span <= 0 || row_span <= 0) continue;
    obj.col = col_lo + static_cast<int>(rng.below(col_span));
    obj.row = static_cast<int>(rng.below(row_span));
    bool free = true;
    for (int y = obj.row; y < obj.row + obj.rows && free; ++y) {
      for (int x = obj.col; x < obj.col + obj.cols; ++x) {
        if (occupied[y * grid + x]) {
          free = false;
          break;
        }
      }
    }
    if (!free) continue;
    for (int y = obj.row; y < obj.row + obj.rows; ++y) {
      for (int x = obj.col; x < obj.col + obj.cols; ++x) occupied[y * grid + x] = 1;
    }
    return true;
  }
  return false;
}

}  // namespace

DataPoint generate_datapoint(const SynthConfig& config, const std::string& split, int index) {
  if (config.grid < 4 || config.image_size % config.grid != 0) {
    throw PreconditionError("synth: image size must be a multiple of a grid of at least 4");
  }
  nn::Rng rng(splitmix(splitmix(config.seed) ^ fnv1a(split)) ^ splitmix(static_cast<uint64_t>(index)));
  const int grid = config.grid;
  const int patch = config.image_size / grid;

  // Scene: optionally one identical pair on opposite halves, then distinct
  // (color, shape) objects.
  const bool twins = config.ambiguity >= 1 &&
                     (index % 10 == 0 || rng.uniform() < (config.ambiguity >= 2 ? 0.3 : 0.1));
  const bool joint = twins && config.ambiguity >= 2 && rng.uniform() < 0.5;
  const int wanted = 1 + static_cast<int>(rng.below(5));

  std::vector<int> combos(kColors.size() * kShapes.size());
  for (size_t i = 0; i < combos.size(); ++i) combos[i] = static_cast<int>(i);
  rng.shuffle(combos);
  size_t next_combo = 0;
  auto take_combo = [&](SceneObject& o) {
    const int c = combos[next_combo++];
    o.color = c / static_cast<int>(kShapes.size());
    o.shape = c % static_cast<int>(kShapes.size());
  };

  std::vector<char> occupied(static_cast<size_t>(grid * grid), 0);
  std::vector<SceneObject> objects;
  std::vector<Entity> entities;
  if (twins) {
    SceneObject left, right;
    take_combo(left);
    right.color = left.color;
    right.shape = left.shape;
    const bool ok = place(left, occupied, grid, 0, grid / 2, rng) &&
                    place(right, occupied, grid, grid / 2, grid, rng);
    if (!ok) throw Error("synth: could not place an identical pair");
    objects.push_back(left);
    objects.push_back(right);
    if (joint) {
      entities.push_back({{0, 1}, 0});
    } else {
      entities.push_back({{0}, -1});
      entities.push_back({{1}, +1});
    }
  }
  while (static_cast<int>(objects.size()) < std::max(wanted, twins ? 2 : 1)) {
    SceneObject o;
    take_combo(o);
    if (!place(o, occupied, grid, 0, grid, rng)) break;
    objects.push_back(o);
    entities.push_back({{static_cast<int>(objects.size()) - 1}, 0});
  }
  rng.shuffle(entities);

  // Caption: "a red square , a blue circle and a green triangle ."
  TextBuilder text;
  for (size_t e = 0; e < entities.size(); ++e) {
    if (e > 0) {
      text.append(text.caption, {e + 1 == entities.size() ? "and" : ","});
    }
    text.mention(text.caption, noun_phrase(entities[e], objects, false), static_cast<int>(e),
                 MentionKind::NounPhrase);
  }
  text.append(text.caption, {"."});

  const int turn_count = 1 + static_cast<int>(rng.below(3));
  for (int t = 0; t < turn_count; ++t) {
    // Draw every choice up front so the stream does not depend on the
    // token budget below.
    const int a = static_cast<int>(rng.below(entities.size()));
    int b = static_cast<int>(rng.below(entities.size()));
    if (entities.size() > 1 && b == a) b = (a + 1) % static_cast<int>(entities.size());
    const bool pick_second = rng.uniform() < 0.5;
    const char* adjective = kAdjectives[rng.below(kAdjectives.size())];

    const bool two_named = config.ambiguity >= 1 && entities.size() > 1;
    const int referent = two_named && pick_second ? b : a;
    const bool plural = entities[referent].plural();
    const auto def_a = noun_phrase(entities[a], objects, true);
    const auto def_b = noun_phrase(entities[b], objects, true);
    const int question_len = two_named ? static_cast<int>(def_a.size() + def_b.size()) + 5
                                       : static_cast<int>(def_a.size()) + 3;
    const int answer_len = two_named ? 6 : 4;
    if (text.total + question_len + answer_len > kMaxTokens) break;

    Turn turn;
    if (two_named) {
      text.append(turn.question, {"do", "you", "see"});
      text.mention(turn.question, def_a, a, MentionKind::NounPhrase);
      text.append(turn.question, {"and"});
      text.mention(turn.question, def_b, b, MentionKind::NounPhrase);
      text.append(turn.question, {"?"});
      text.append(turn.answer, {"yes", ","});
    } else {
      text.append(turn.question, {"where", entities[a].plural() ? "are" : "is"});
      text.mention(turn.question, def_a, a, MentionKind::NounPhrase);
      text.append(turn.question, {"?"});
    }
    text.mention(turn.answer, {plural ? "they" : "it"}, referent, MentionKind::Pronoun);
    text.append(turn.answer, {plural ? "are" : "is", adjective, "."});
    text.turns.push_back(std::move(turn));
  }

  char id[96];
  std::snprintf(id, sizeof id, "synth-%llu-%s-%04d",
                static_cast<unsigned long long>(config.seed), split.c_str(), index);

  DataPoint dp;
  dp.image_id = id;
  dp.image_size = {config.image_size, config.image_size};
  dp.dialogue = Dialogue(dp.image_id, text.caption, text.turns);

  dp.features.height = grid;
  dp.features.width = grid;
  dp.features.channels = kSynthChannels;
  dp.features.data.assign(static_cast<size_t>(grid * grid * kSynthChannels), 0.0f);
  for (size_t i = 0; i < objects.size(); ++i) {
    const SceneObject& o = objects[i];
    for (int y = o.row; y < o.row + o.rows; ++y) {
      for (int x = o.col; x < o.col + o.cols; ++x) {
        const size_t base = (static_cast<size_t>(y) * grid + x) * kSynthChannels;
        dp.features.data[base + o.color] = 1.0f;
        dp.features.data[base + kColors.size() + o.shape] = 1.0f;
        dp.features.data[base + kSynthChannels - 1] = 1.0f;
      }
    }
    dp.boxes.push_back({"b" + std::to_string(i),
                        Rect(o.col * patch, o.row * patch, (o.col + o.cols) * patch,
                             (o.row + o.rows) * patch),
                        dp.image_size});
  }

  // Chains in entity order; mentions in token order.
  dp.chains.resize(entities.size());
  for (size_t e = 0; e < entities.size(); ++e) {
    dp.chains[e].id = "c" + std::to_string(e);
    for (int o : entities[e].objects) dp.chains[e].box_ids.push_back("b" + std::to_string(o));
  }
  for (size_t m = 0; m < text.mention_spans.size(); ++m) {
    const auto& [span, entity] = text.mention_spans[m];
    Mention mention{"m" + std::to_string(m), span, text.mention_kinds[m],
                    dp.chains[entity].id};
    dp.chains[entity].mention_ids.push_back(mention.id);
    dp.mentions.push_back(std::move(mention));
  }
  return dp;
}

std::vector<DataPoint> generate_split(const SynthConfig& config, const std::string& split,
                                      int count) {
  std::vector<DataPoint> out;
  out.reserve(static_cast<size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(generate_datapoint(config, split, i));
  return out;
}

Corpus generate_corpus(const SynthConfig& config) {
  if (config.train + config.dev + config.test < 1) {
    throw PreconditionError("synth: at least one datapoint is required");
  }
  Corpus c;
  c.splits["train"] = generate_split(config, "train", config.train);
  c.splits["dev"] = generate_split(config, "dev", config.dev);
  c.splits["test"] = generate_split(config, "test", config.test);
  return c;
}

Corpus generate_corpus(uint64_t seed, int n, int ambiguity) {
  SynthConfig config;
  config.seed = seed;
  config.train = n;
  config.dev = 0;
  config.test = 0;
  config.ambiguity = ambiguity;
  return generate_corpus(config);
}

}  // namespace vdg
