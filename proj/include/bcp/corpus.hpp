#pragma once

#include <bcp/types.hpp>

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace bcp {

enum class Label : int { NoBc = 0, Yeah = 1, UhHuh = 2 };
enum class Split : int { Train = 0, Dev = 1, Test = 2 };

const char* to_string(Label label);
const char* to_string(Split split);
Label label_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct Instance {
  std::string instance_id;
  std::string dialog_id;
  char channel = 'A';            // audio channel carrying the speaker
  std::string speaker_id;        // interlocutor producing the audio
  std::string listener_id;       // interlocutor (not) producing the BC
  double t_ms = 0.0;             // prediction point
  Label label = Label::NoBc;
  Split split = Split::Train;
  std::string audio_path;
};

struct TokenLexicon {
  std::set<std::string> yeah_tokens;        // surface realizations, normalized
  std::set<std::string> uhhuh_tokens;
  std::set<std::string> exclusion_markers;  // bracketed markers, e.g. [laughter]
  std::set<std::string> multiword_bc;
  std::set<std::string> intensifiers;

  static TokenLexicon english_defaults();
  static TokenLexicon german_defaults();
  // Reads yeah.txt / uhhuh.txt / exclude.txt / multiword.txt / intensifiers.txt
  // (one surface form per line, '#' comments; missing files leave the set empty).
  static TokenLexicon load_dir(const std::string& dir);
};

// Lowercase, strip punctuation except hyphens, trim, collapse whitespace.
// Bracketed markers are removed here; categorize_bc inspects them separately.
std::string normalize_utterance(const std::string& raw);

// Bracketed [...] chunks of the raw utterance, lowercased, brackets kept.
std::vector<std::string> extract_markers(const std::string& raw);

enum class BcCategory { Yeah, UhHuh, Reject };

BcCategory categorize_bc(const std::string& raw_utterance, const TokenLexicon& lexicon);

// Short utterances always count; longer ones only when every word is covered
// by the BC vocabulary (single-word BCs, multiword expressions, intensifiers).
bool geco_is_bc(const std::string& raw_utterance, double duration_ms, const TokenLexicon& lexicon);

struct NegativeSampleResult {
  std::vector<Instance> negatives;
  std::size_t skipped_out_of_range = 0;
  std::size_t skipped_overlap = 0;
};

// One NO_BC candidate per positive at t - offset_ms; kept only when the
// candidate window stays inside the recording and overlaps no positive of the
// same listener. positives must belong to one dialog.
NegativeSampleResult sample_negatives(const std::vector<Instance>& positives,
                                      double recording_duration_ms,
                                      double offset_ms = 3000.0, double window_ms = 2000.0);

struct IdAssignment {
  std::map<std::string, std::string> channel_to_speaker;
  std::size_t n_assigned = 0;  // channels that lacked a speaker
  std::size_t n_unique = 0;
};

IdAssignment assign_interlocutor_ids(
    const std::map<std::string, std::optional<std::string>>& channels, std::uint64_t seed);

// Assigns the first sizes[0] dialogs (input order) to train, the next block to
// dev, the rest to test. Splitting is by conversation, never by instance.
std::map<std::string, Split> split_conversations(const std::vector<std::string>& dialog_ids,
                                                 const std::array<std::size_t, 3>& sizes);

struct CorpusStats {
  std::array<std::size_t, 3> class_counts{0, 0, 0};  // indexed by Label
  std::size_t conversations = 0;
  std::size_t interlocutors = 0;
};

CorpusStats corpus_stats(const std::vector<Instance>& instances);
void write_stats_csv(const std::string& path, const CorpusStats& stats,
                     const std::string& meta_comment);

void write_manifest(const std::string& path, const std::vector<Instance>& instances);
std::vector<Instance> read_manifest(const std::string& path);

enum class SynthRule { AudioOnly, AudioPlusListener };

struct SynthConfig {
  int n_listeners = 3;
  int n_speakers = 5;
  std::size_t n_instances = 4200;
  SynthRule rule = SynthRule::AudioPlusListener;
  std::uint64_t seed = 1;
  int n_frames = 48;
  double noise = 0.05;
  std::size_t instances_per_dialog = 10;
  double train_frac = 5.0 / 7.0;
  double dev_frac = 1.0 / 7.0;
};

struct Dataset {
  std::vector<Instance> instances;
  std::vector<Matrix> windows;  // parallel to instances
};

// Desk-scale corpus from 3 noisy class prototypes. audio_only draws labels
// with shares 1/2, 1/4, 1/4 (NO_BC = 50%); audio_plus_listener draws the
// prototype uniformly and labels it through the listener's cyclic permutation
// (listener index mod 3), so labels are balanced, audio alone is capped at the
// permutation-ambiguity bound, and audio + listener determines the label.
Dataset synth_dataset(const SynthConfig& config);

// Writes manifest.jsonl, per-instance windows/<id>.bcmf and stats.csv.
void write_dataset(const Dataset& dataset, const std::string& dir,
                   const std::string& meta_comment);

// Loads instances and materializes their windows. audio_path may point at a
// .bcmf frame sequence or a .wav file (features computed on the fly, one read
// per distinct file); relative paths resolve against the manifest's directory.
Dataset load_dataset(const std::string& manifest_path, int n_frames);

// Keeps the last n_frames rows of every window: the same end time with less
// context. InvalidConfig when a window has fewer rows than n_frames.
Dataset truncate_windows(const Dataset& data, int n_frames);

}  // namespace bcp
