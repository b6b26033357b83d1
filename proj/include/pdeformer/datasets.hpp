#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pdeformer/tensor.hpp"

namespace pdeformer {

enum class InputKind { Image, Text };

// One model input: either a 28x28 image or a token-id sequence.
struct Sample {
  InputKind kind = InputKind::Image;
  Tensor image;  // rows x cols in [0,1]
  std::vector<std::size_t> tokens;
  std::size_t label = 0;
};

struct ImageSet {
  std::vector<Tensor> images;  // each 28x28, values in [0,1]
  std::vector<std::size_t> labels;
  std::size_t classes = 10;
};

struct TextSet {
  std::vector<std::vector<std::size_t>> docs;  // fixed length, id 0 = unknown/pad
  std::vector<std::size_t> labels;
  std::map<std::string, std::size_t> vocab;  // token -> id, ids start at 1
  std::size_t vocab_size = 0;                // including the reserved id 0
  std::size_t classes = 0;
};

// IDX readers/writers. Big-endian magic 0x00000803 (images) / 0x00000801
// (labels), big-endian 32-bit dims, unsigned bytes. Pixels scale by 1/255.
ImageSet load_mnist_idx(const std::string& image_path, const std::string& label_path);
void save_mnist_idx(const ImageSet& set, const std::string& image_path,
                    const std::string& label_path);

// Lines of "label<TAB>text". Lowercases, splits on non-alphanumeric runs,
// frequency-ranked vocabulary up to `vocab_cap` ids (0 reserved for
// out-of-vocabulary), truncates/pads every document to `seq_cap`.
TextSet load_labeled_text(const std::string& path, std::size_t vocab_cap,
                          std::size_t seq_cap);

std::vector<std::string> tokenize(const std::string& text);

// Class-centered Gaussian clusters rendered as 28x28 images, clipped to [0,1].
ImageSet synth_blobs(std::uint64_t seed, std::size_t n, std::size_t classes,
                     double noise = 0.05);

// Each class plants a signature token `repeats` times per document.
TextSet synth_motifs(std::uint64_t seed, std::size_t n, std::size_t classes,
                     std::size_t vocab, std::size_t seq_len, std::size_t repeats = 3);

std::vector<Sample> to_samples(const ImageSet& set);
std::vector<Sample> to_samples(const TextSet& set);

}  // namespace pdeformer
