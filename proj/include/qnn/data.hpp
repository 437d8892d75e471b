#pragma once

// Framewise-labelled feature sequences: QFEA/CSV I/O, naive quaternion
// composition, the synthetic delta-coded task and padded batching.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace qnn {

struct Utterance {
  std::string id;
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<float> features;  // frames × dim, row-major
  std::vector<std::int32_t> labels;

  float at(std::size_t t, std::size_t d) const { return features[t * dim + d]; }
  // Throws DataError on T = 0, size mismatch or non-finite values.
  void validate() const;
};

/// Time-major padded batch. mask[t*B+b] is 1 on valid frames, which always
/// form the prefix [0, lengths[b]).
struct UtteranceBatch {
  std::size_t max_frames = 0;
  std::size_t batch = 0;
  std::size_t dim = 0;
  std::vector<float> features;  // max_frames × batch × dim, zero on padding
  std::vector<std::int32_t> labels;  // max_frames × batch, 0 on padding
  std::vector<std::uint8_t> mask;    // max_frames × batch
  std::vector<std::size_t> lengths;
  std::vector<std::string> ids;

  std::size_t valid_frames() const;
};

UtteranceBatch make_batch(const std::vector<const Utterance*>& utts);

/// Groups utterances into batches of at most batch_size. The order is
/// shuffled with `rng`; with sort_by_length, utterances are bucketed by
/// length (sorted, chunked, then the chunks shuffled) to limit padding.
std::vector<UtteranceBatch> make_batches(const std::vector<Utterance>& utts, std::size_t batch_size,
                                         std::mt19937_64* rng, bool sort_by_length);

// ---- files -----------------------------------------------------------------

void write_features(const std::filesystem::path& path, const std::vector<Utterance>& utts);
/// QFEA by magic; anything else is parsed as CSV.
std::vector<Utterance> read_features(const std::filesystem::path& path);

std::vector<Utterance> read_qfea(std::istream& in);
void write_qfea(std::ostream& out, const std::vector<Utterance>& utts);
std::vector<Utterance> read_csv(std::istream& in);
void write_csv(std::ostream& out, const std::vector<Utterance>& utts);

// ---- naive quaternion input ----------------------------------------------------

struct ComposedFeatures {
  std::size_t frames = 0;
  std::size_t dim = 0;  // multiple of 4
  std::size_t padded = 0;  // zeros appended per frame
  std::vector<float> features;
};

/// Reads every 4 consecutive coefficients of a frame as one quaternion and
/// stores the frame in quarter-block layout. D is right-padded with zeros to
/// the next multiple of 4.
ComposedFeatures naive_quat_compose(const std::vector<float>& features, std::size_t frames, std::size_t dim);
std::size_t naive_quat_width(std::size_t dim);

// ---- synthetic task ----------------------------------------------------------

/// Segments of random length; each frame is its class template plus
/// Gaussian noise. Static classes have distinct constant templates. Classes
/// in a delta pair share one mean template and differ only by the sign of a
/// linear ramp centred on the segment, so single-frame statistics of the two
/// classes are identical.
struct SynthSpec {
  std::size_t classes = 4;
  std::size_t dim = 40;
  std::size_t delta_pairs = 1;  // the last 2·delta_pairs classes are delta-coded
  std::size_t min_segment = 6;
  std::size_t max_segment = 14;
  std::size_t min_frames = 40;  // per utterance (segments are appended until reached)
  std::size_t max_frames = 70;
  double noise = 0.5;
  double slope = 0.35;  // ramp increment per frame
  std::vector<double> priors;  // empty = uniform
  std::size_t train_utterances = 200;
  std::size_t valid_utterances = 50;
  std::size_t test_utterances = 50;
  std::uint64_t seed = 1234;

  void validate() const;
};

struct SynthTemplates {
  std::vector<std::vector<double>> means;   // per class
  std::vector<std::vector<double>> slopes;  // per class; zero for static classes
  std::vector<bool> delta_coded;
};

struct SynthDataset {
  SynthTemplates templates;
  std::vector<Utterance> train;
  std::vector<Utterance> valid;
  std::vector<Utterance> test;
};

SynthDataset generate_synthetic(const SynthSpec& spec);

}  // namespace qnn
