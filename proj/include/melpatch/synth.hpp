#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "melpatch/frontend.hpp"

namespace melpatch {

enum class SynthKind {
  /// Voiced syllables with gliding pitch and moving formants, fricative
  /// noise bursts and short pauses.
  Speech,
  /// Alternating blocks of a loud harmonic buzz and digital silence of
  /// equal length. Used where exactly two kinds of patch are wanted.
  OnOff,
};

SynthKind parse_synth_kind(const std::string& name);

Waveform synth_utterance(double duration_s, int sample_rate, std::uint64_t seed,
                         SynthKind kind = SynthKind::Speech);

/// Writes utt_000.wav ... into `dir` (created if needed). Utterance i uses
/// seed + i. Returns the written paths in order.
std::vector<std::filesystem::path> write_synth_corpus(const std::filesystem::path& dir,
                                                      std::size_t count, double duration_s,
                                                      int sample_rate, std::uint64_t seed,
                                                      SynthKind kind = SynthKind::Speech);

}  // namespace melpatch
