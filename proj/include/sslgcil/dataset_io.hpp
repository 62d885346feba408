#pragma once

// Line-oriented dataset files.
//
//   ssl-gcil-v1 <P> <D_a>
//   <doa_deg> <v_1> ... <v_{P*D_a}>
//   ...
//
// Values are space separated and written with 9 significant digits.

#include "sslgcil/common.hpp"
#include "sslgcil/signal.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace sslgcil {

inline constexpr const char* kDatasetMagic = "ssl-gcil-v1";

inline void write_dataset_stream(std::ostream& out, const std::vector<LabeledSample>& samples, int pairs,
                                 int lag_bins) {
  out << kDatasetMagic << ' ' << pairs << ' ' << lag_bins << '\n';
  char buf[32];
  for (const auto& s : samples) {
    if (s.feature.pairs() != pairs || s.feature.lag_bins() != lag_bins)
      throw std::invalid_argument("write_dataset: sample feature shape does not match header");
    out << s.doa_deg;
    for (double v : s.feature.values()) {
      std::snprintf(buf, sizeof buf, " %.9g", v);
      out << buf;
    }
    out << '\n';
  }
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<LabeledSample>& samples,
                          int pairs, int lag_bins) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open dataset file for writing: " + path.string());
  write_dataset_stream(out, samples, pairs, lag_bins);
  if (!out) throw IoError("failed writing dataset file: " + path.string());
}

inline std::vector<LabeledSample> read_dataset_stream(std::istream& in, const std::string& name = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw IoError(name + ": empty dataset file");
  std::istringstream header(line);
  std::string magic;
  int pairs = 0;
  int lag_bins = 0;
  if (!(header >> magic >> pairs >> lag_bins) || magic != kDatasetMagic || pairs <= 0 || lag_bins <= 0)
    throw IoError(name + ": bad header '" + line + "'");

  const std::size_t width = static_cast<std::size_t>(pairs) * lag_bins;
  std::vector<LabeledSample> samples;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream record(line);
    LabeledSample s;
    if (!(record >> s.doa_deg) || s.doa_deg < 0 || s.doa_deg >= kNumBins)
      throw IoError(name + ":" + std::to_string(line_no) + ": bad DoA field");
    std::vector<double> values;
    values.reserve(width);
    double v = 0.0;
    while (record >> v) values.push_back(v);
    if (values.size() != width)
      throw IoError(name + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                    " feature values, got " + std::to_string(values.size()));
    s.feature = GccFeature(std::move(values), pairs, lag_bins);
    samples.push_back(std::move(s));
  }
  return samples;
}

inline std::vector<LabeledSample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("dataset file not found: " + path.string());
  return read_dataset_stream(in, path.string());
}

}  // namespace sslgcil
