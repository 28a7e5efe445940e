#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "deltaedit/bundle.hpp"
#include "deltaedit/tensor.hpp"

namespace deltaedit {

/// Conditioning pair for the mapper: the unit-normalized anchor embedding
/// and the difference of unit-normalized embeddings. The delta is not
/// renormalized, so identical inputs give the zero direction.
struct DeltaCondition {
  std::vector<double> anchor;
  std::vector<double> delta;
};

inline DeltaCondition make_delta(std::span<const double> from, std::span<const double> to) {
  if (from.size() != to.size()) {
    throw Error(ErrorCode::ShapeMismatch, "make_delta on embeddings of length " +
                                              std::to_string(from.size()) + " and " +
                                              std::to_string(to.size()));
  }
  DeltaCondition c;
  c.anchor = normalized(from);
  const std::vector<double> target = normalized(to);
  c.delta.resize(target.size());
  for (std::size_t k = 0; k < target.size(); ++k) c.delta[k] = target[k] - c.anchor[k];
  return c;
}

struct AlignmentReport {
  double mean_cosine = 0.0;
  double median_cosine = 0.0;
  double std_cosine = 0.0;
  double modality_gap = 0.0;  // distance between centroids of the normalized sets
  std::size_t count = 0;
};

/// Per-pair cosine statistics between a[k] and b[k] plus the centroid gap of
/// the two unit-normalized sets. Every vector is normalized first, so the
/// report does not depend on input scale.
inline AlignmentReport alignment_report(const std::vector<std::vector<double>>& a,
                                        const std::vector<std::vector<double>>& b) {
  if (a.empty()) throw Error(ErrorCode::InvalidArgument, "alignment_report on empty input");
  if (a.size() != b.size()) {
    throw Error(ErrorCode::ShapeMismatch, "alignment_report needs equal-length lists, got " +
                                              std::to_string(a.size()) + " and " +
                                              std::to_string(b.size()));
  }
  const std::size_t dim = a.front().size();
  std::vector<double> cosines(a.size());
  std::vector<double> centroid_a(dim, 0.0);
  std::vector<double> centroid_b(dim, 0.0);
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].size() != dim || b[k].size() != dim) {
      throw Error(ErrorCode::ShapeMismatch, "alignment_report: pair " + std::to_string(k) +
                                                " has inconsistent dimensions");
    }
    const auto na = normalized(a[k]);
    const auto nb = normalized(b[k]);
    cosines[k] = std::clamp(dot(na, nb), -1.0, 1.0);
    for (std::size_t j = 0; j < dim; ++j) {
      centroid_a[j] += na[j];
      centroid_b[j] += nb[j];
    }
  }
  AlignmentReport r;
  r.count = a.size();
  const double n = static_cast<double>(r.count);
  double sum = 0.0;
  for (double c : cosines) sum += c;
  r.mean_cosine = sum / n;
  double var = 0.0;
  for (double c : cosines) var += (c - r.mean_cosine) * (c - r.mean_cosine);
  r.std_cosine = std::sqrt(var / n);
  std::vector<double> sorted = cosines;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  r.median_cosine = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  double gap = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double d = (centroid_a[j] - centroid_b[j]) / n;
    gap += d * d;
  }
  r.modality_gap = std::sqrt(gap);
  return r;
}

/// Raw cross-modal and delta-space reports for a bundle whose record k is
/// paired with text row k.
struct BundleAlignment {
  AlignmentReport raw;
  AlignmentReport delta;
};

inline BundleAlignment analyze_alignment(const Bundle& bundle, const Tensor& texts,
                                         std::size_t pair_count, std::uint64_t seed) {
  if (texts.rows() != bundle.size() || texts.cols() != bundle.clip_dim) {
    throw Error(ErrorCode::ShapeMismatch, "text table " + texts.shape_string() +
                                              " does not match bundle of " +
                                              std::to_string(bundle.size()) + " x " +
                                              std::to_string(bundle.clip_dim));
  }
  BundleAlignment out;
  std::vector<std::vector<double>> images, captions;
  for (std::size_t k = 0; k < bundle.size(); ++k) {
    images.push_back(bundle.records[k].clip);
    captions.emplace_back(texts.row(k).begin(), texts.row(k).end());
  }
  out.raw = alignment_report(images, captions);

  std::vector<std::vector<double>> image_deltas, text_deltas;
  for (const auto& [i, j] : sample_pairs(bundle, pair_count, seed)) {
    image_deltas.push_back(make_delta(images[i], images[j]).delta);
    text_deltas.push_back(make_delta(captions[i], captions[j]).delta);
  }
  out.delta = alignment_report(image_deltas, text_deltas);
  return out;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace detail

/// Writes `label,dim_0,...,dim_{D-1}` followed by one row per embedding,
/// values printed with 9 significant digits.
inline void export_csv(const std::vector<std::vector<double>>& embeddings,
                       const std::vector<std::string>& labels, const std::filesystem::path& path) {
  if (embeddings.size() != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "export_csv: label count differs from embedding count");
  }
  const std::size_t dim = embeddings.empty() ? 0 : embeddings.front().size();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
  out << "label";
  for (std::size_t j = 0; j < dim; ++j) out << ",dim_" << j;
  out << '\n';
  char buf[32];
  for (std::size_t k = 0; k < embeddings.size(); ++k) {
    if (embeddings[k].size() != dim) {
      throw Error(ErrorCode::ShapeMismatch, "export_csv: ragged embedding rows");
    }
    out << detail::csv_field(labels[k]);
    for (double v : embeddings[k]) {
      std::snprintf(buf, sizeof buf, "%.9g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write to '" + path.string() + "' failed");
}

struct CsvTable {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Format, "empty CSV '" + path.string() + "'");
  const std::size_t width = detail::split_csv_line(line).size();
  CsvTable t;
  while (std::getline(in, line)) {
    auto fields = detail::split_csv_line(line);
    if (fields.size() != width) {
      throw Error(ErrorCode::Format, "CSV row " + std::to_string(t.rows.size() + 1) +
                                         " has " + std::to_string(fields.size()) + " fields");
    }
    t.labels.push_back(fields[0]);
    std::vector<double> row;
    for (std::size_t j = 1; j < fields.size(); ++j) row.push_back(std::stod(fields[j]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace deltaedit
