#pragma once

#include <map>
#include <string>
#include <vector>

#include "limn/captioner.hpp"
#include "limn/selftrain.hpp"
#include "limn/synthio.hpp"
#include "limn/trainer.hpp"

namespace limn {

// Plain key=value settings, one pair per line; '#' starts a comment.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& at(const std::string& key) const;
  // Values from `over` win.
  void merge(const KeyValues& over);
  // Sorted by key, one "key=value" line each.
  std::string dump() const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

struct RunSettings {
  synth::WorldParams world;
  TrainConfig train;
  CaptionerConfig captioner;
  SelfTrainConfig selftrain;
  std::string preset = "reference";
  std::string cir = "limn";
  // Triplet sources: a split name (train, val, test, all) or a triplets.jsonl path.
  std::string train_source = "train";
  std::string val_source = "val";
  std::string test_source = "test";
  std::string labeled_source = "train";
  std::string query_source = "test";
  double train_fraction = 1.0;
};

// Commands: gen-data, train, eval, score, mine-pairs, caption, self-train, report.
std::vector<std::string> command_keys(const std::string& command);

// Preset first, then every other key. Keys the command does not read are an
// error, as are malformed values.
RunSettings resolve_settings(const std::string& command, const KeyValues& kv);

// Every key the command reads with its resolved value.
KeyValues settings_echo(const std::string& command, const RunSettings& s);

// Shortest text that reads back to the same double.
std::string format_double(double v);

std::vector<synth::Triplet> resolve_source(const synth::Dataset& ds, const std::string& source);
// The first floor(fraction * n) triplets, at least one.
std::vector<synth::Triplet> take_fraction(std::vector<synth::Triplet> triplets, double fraction);

}  // namespace limn
