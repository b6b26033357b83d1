#include "pdeformer/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pdeformer/errors.hpp"
#include "pdeformer/rng.hpp"

namespace pdeformer {

namespace {

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

std::uint32_t read_u32_be(const std::vector<unsigned char>& b, std::size_t off,
                          const std::string& path) {
  if (off + 4 > b.size()) {
    throw IOError("'" + path + "': truncated at byte " + std::to_string(off) +
                  " (need 4 bytes, have " + std::to_string(b.size() - off) + ")");
  }
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

void write_u32_be(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

ImageSet load_mnist_idx(const std::string& image_path, const std::string& label_path) {
  const auto img = read_all(image_path);
  const std::uint32_t magic = read_u32_be(img, 0, image_path);
  if (magic != 0x00000803u) {
    char hex[16];
    std::snprintf(hex, sizeof hex, "0x%08x", magic);
    throw IOError("'" + image_path + "': bad image magic " + hex + " at byte 0");
  }
  const std::uint32_t n = read_u32_be(img, 4, image_path);
  const std::uint32_t rows = read_u32_be(img, 8, image_path);
  const std::uint32_t cols = read_u32_be(img, 12, image_path);
  if (rows != 28 || cols != 28) {
    throw IOError("'" + image_path + "': expected 28x28 images, header at byte 8 says " +
                  std::to_string(rows) + "x" + std::to_string(cols));
  }
  const std::size_t need = 16 + std::size_t(n) * rows * cols;
  if (img.size() != need) {
    throw IOError("'" + image_path + "': payload is " + std::to_string(img.size()) +
                  " bytes, header implies " + std::to_string(need));
  }

  const auto lab = read_all(label_path);
  const std::uint32_t lmagic = read_u32_be(lab, 0, label_path);
  if (lmagic != 0x00000801u) {
    char hex[16];
    std::snprintf(hex, sizeof hex, "0x%08x", lmagic);
    throw IOError("'" + label_path + "': bad label magic " + hex + " at byte 0");
  }
  const std::uint32_t ln = read_u32_be(lab, 4, label_path);
  if (ln != n) {
    throw IOError("'" + label_path + "': " + std::to_string(ln) + " labels for " +
                  std::to_string(n) + " images");
  }
  if (lab.size() != 8 + std::size_t(ln)) {
    throw IOError("'" + label_path + "': payload is " + std::to_string(lab.size()) +
                  " bytes, header implies " + std::to_string(8 + std::size_t(ln)));
  }

  ImageSet set;
  set.classes = 10;
  set.images.reserve(n);
  set.labels.reserve(n);
  std::size_t off = 16;
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor im({rows, cols});
    for (std::size_t k = 0; k < std::size_t(rows) * cols; ++k) {
      im[k] = img[off++] / 255.0;
    }
    set.images.push_back(std::move(im));
    const unsigned char y = lab[8 + i];
    if (y > 9) {
      throw IOError("'" + label_path + "': label " + std::to_string(int(y)) + " at byte " +
                    std::to_string(8 + i) + " out of range [0,10)");
    }
    set.labels.push_back(y);
  }
  return set;
}

void save_mnist_idx(const ImageSet& set, const std::string& image_path,
                    const std::string& label_path) {
  if (set.images.size() != set.labels.size()) {
    throw ShapeError("image/label count mismatch");
  }
  std::ofstream img(image_path, std::ios::binary);
  if (!img) throw IOError("cannot write '" + image_path + "'");
  write_u32_be(img, 0x00000803u);
  write_u32_be(img, static_cast<std::uint32_t>(set.images.size()));
  write_u32_be(img, 28);
  write_u32_be(img, 28);
  for (const Tensor& im : set.images) {
    if (im.rank() != 2 || im.rows() != 28 || im.cols() != 28) {
      throw ShapeError("save_mnist_idx expects 28x28 images");
    }
    for (std::size_t k = 0; k < im.size(); ++k) {
      const double v = im[k] * 255.0;
      img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v))));
    }
  }
  if (!img) throw IOError("short write to '" + image_path + "'");

  std::ofstream lab(label_path, std::ios::binary);
  if (!lab) throw IOError("cannot write '" + label_path + "'");
  write_u32_be(lab, 0x00000801u);
  write_u32_be(lab, static_cast<std::uint32_t>(set.labels.size()));
  for (std::size_t y : set.labels) lab.put(static_cast<char>(static_cast<unsigned char>(y)));
  if (!lab) throw IOError("short write to '" + label_path + "'");
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const unsigned char u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

TextSet load_labeled_text(const std::string& path, std::size_t vocab_cap,
                          std::size_t seq_cap) {
  if (vocab_cap < 2 || seq_cap < 1) {
    throw ShapeError("load_labeled_text needs vocab_cap >= 2 and seq_cap >= 1");
  }
  std::ifstream in(path);
  if (!in) throw IOError("cannot open '" + path + "'");

  std::vector<std::vector<std::string>> token_docs;
  std::vector<std::string> label_names;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IOError("'" + path + "': line " + std::to_string(lineno) + " has no tab separator");
    }
    label_names.push_back(line.substr(0, tab));
    token_docs.push_back(tokenize(line.substr(tab + 1)));
  }

  // Frequency-ranked vocabulary, ties broken lexicographically for determinism.
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : token_docs)
    for (const auto& tok : doc) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  TextSet set;
  std::size_t next_id = 1;
  for (const auto& [tok, cnt] : ranked) {
    if (next_id >= vocab_cap) break;
    set.vocab[tok] = next_id++;
  }
  set.vocab_size = next_id;

  std::map<std::string, std::size_t> class_ids;
  for (const auto& name : label_names) class_ids.emplace(name, 0);
  std::size_t cid = 0;
  for (auto& [name, id] : class_ids) id = cid++;
  set.classes = class_ids.size();

  for (std::size_t i = 0; i < token_docs.size(); ++i) {
    std::vector<std::size_t> ids(seq_cap, 0);
    for (std::size_t t = 0; t < token_docs[i].size() && t < seq_cap; ++t) {
      auto it = set.vocab.find(token_docs[i][t]);
      ids[t] = it == set.vocab.end() ? 0 : it->second;
    }
    set.docs.push_back(std::move(ids));
    set.labels.push_back(class_ids.at(label_names[i]));
  }
  return set;
}

ImageSet synth_blobs(std::uint64_t seed, std::size_t n, std::size_t classes, double noise) {
  if (classes < 1 || n < classes) throw ShapeError("synth_blobs needs n >= classes >= 1");
  // One smooth random template per class; samples are the template plus
  // iid pixel noise, clipped to [0,1].
  std::vector<Tensor> centers;
  for (std::size_t c = 0; c < classes; ++c) {
    Rng rng = Rng::derive(seed, "blobs/center/" + std::to_string(c));
    Tensor ctr({28, 28});
    for (std::size_t k = 0; k < ctr.size(); ++k) ctr[k] = rng.uniform(0.2, 0.8);
    centers.push_back(std::move(ctr));
  }
  ImageSet set;
  set.classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    Rng rng = Rng::derive(seed, "blobs/sample/" + std::to_string(i));
    Tensor im({28, 28});
    for (std::size_t k = 0; k < im.size(); ++k) {
      im[k] = std::clamp(centers[c][k] + noise * rng.gaussian(), 0.0, 1.0);
    }
    set.images.push_back(std::move(im));
    set.labels.push_back(c);
  }
  return set;
}

TextSet synth_motifs(std::uint64_t seed, std::size_t n, std::size_t classes,
                     std::size_t vocab, std::size_t seq_len, std::size_t repeats) {
  if (classes < 1 || n < classes) throw ShapeError("synth_motifs needs n >= classes >= 1");
  if (vocab < classes + 2) throw ShapeError("synth_motifs needs vocab >= classes + 2");
  if (seq_len < repeats) throw ShapeError("synth_motifs needs seq_len >= repeats");
  TextSet set;
  set.vocab_size = vocab;
  set.classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    Rng rng = Rng::derive(seed, "motifs/doc/" + std::to_string(i));
    std::vector<std::size_t> doc(seq_len);
    // Filler drawn from the non-signature range, signature id = 1 + class.
    for (std::size_t t = 0; t < seq_len; ++t) {
      doc[t] = 1 + classes + rng.below(vocab - classes - 1);
    }
    for (std::size_t r = 0; r < repeats; ++r) {
      doc[r * seq_len / repeats] = 1 + c;
    }
    set.docs.push_back(std::move(doc));
    set.labels.push_back(c);
  }
  return set;
}

std::vector<Sample> to_samples(const ImageSet& set) {
  std::vector<Sample> out;
  out.reserve(set.images.size());
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    Sample s;
    s.kind = InputKind::Image;
    s.image = set.images[i];
    s.label = set.labels[i];
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> to_samples(const TextSet& set) {
  std::vector<Sample> out;
  out.reserve(set.docs.size());
  for (std::size_t i = 0; i < set.docs.size(); ++i) {
    Sample s;
    s.kind = InputKind::Text;
    s.tokens = set.docs[i];
    s.label = set.labels[i];
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pdeformer
