#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ktube/common.hpp"

namespace ktube {

using Json = nlohmann::json;

inline Json mat_to_json(const Mat& m) {
  Json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(m.size());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));  // row-major
  j["data"] = std::move(data);
  return j;
}

inline Mat mat_from_json(const Json& j) {
  const int rows = j.at("rows"), cols = j.at("cols");
  const auto& data = j.at("data");
  if (static_cast<int>(data.size()) != rows * cols)
    throw Error("BadFormat", "matrix json size mismatch");
  Mat m(rows, cols);
  int i = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = data[i++];
  return m;
}

inline Json vec_to_json(const Vec& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vec vec_from_json(const Json& j) {
  Vec v(j.size());
  for (int i = 0; i < static_cast<int>(j.size()); ++i) v[i] = j[i];
  return v;
}

// ---------------------------------------------------------------------------
// Minimal CSV handling (numeric tables with a header row)
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  Mat data;  // rows x header.size()

  int col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw Error("BadFormat", "CSV column not found: " + name);
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("IoError", "cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw Error("BadFormat", "empty CSV " + path);
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.header.push_back(cell);
  }
  std::vector<double> values;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    size_t cols = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::stod(cell));
      ++cols;
    }
    if (cols != t.header.size())
      throw Error("BadFormat", "ragged CSV row in " + path);
    ++rows;
  }
  t.data = Mat(rows, static_cast<int>(t.header.size()));
  int i = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < t.data.cols(); ++c) t.data(r, c) = values[i++];
  return t;
}

inline void write_csv(const std::string& path,
                      const std::vector<std::string>& header, const Mat& data) {
  std::ofstream out(path);
  if (!out) throw Error("IoError", "cannot write " + path);
  out.precision(17);
  for (size_t i = 0; i < header.size(); ++i)
    out << header[i] << (i + 1 < header.size() ? "," : "\n");
  for (int r = 0; r < data.rows(); ++r)
    for (int c = 0; c < data.cols(); ++c)
      out << data(r, c) << (c + 1 < data.cols() ? "," : "\n");
}

// ---------------------------------------------------------------------------
// Self-rendered SVG line charts (CSVs stay the authoritative output)
// ---------------------------------------------------------------------------

struct SvgSeries {
  std::string label;
  std::string color;
  std::vector<double> y;
};

/// Line chart over a shared integer x-axis, with optional horizontal
/// reference lines (e.g. a constraint bound).
inline void write_svg_chart(const std::string& path, const std::string& title,
                            const std::vector<SvgSeries>& series,
                            const std::vector<double>& reference_lines = {}) {
  if (series.empty()) throw Error("BadFormat", "svg chart needs data");
  const double w = 720, h = 420, ml = 60, mr = 20, mt = 40, mb = 40;
  size_t n = 0;
  double ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  for (double v : reference_lines) {
    ymin = std::min(ymin, v);
    ymax = std::max(ymax, v);
  }
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](size_t i) { return ml + (w - ml - mr) * (n > 1 ? double(i) / (n - 1) : 0.5); };
  auto py = [&](double v) { return mt + (h - mt - mb) * (1.0 - (v - ymin) / (ymax - ymin)); };

  std::ofstream out(path);
  if (!out) throw Error("IoError", "cannot write " + path);
  out.precision(8);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
      << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymin + (ymax - ymin) * k / 4.0;
    out << "<text x=\"" << ml - 6 << "\" y=\"" << py(v) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << v << "</text>\n";
  }
  for (double v : reference_lines) {
    out << "<line x1=\"" << ml << "\" y1=\"" << py(v) << "\" x2=\"" << w - mr
        << "\" y2=\"" << py(v)
        << "\" stroke=\"red\" stroke-dasharray=\"6 4\"/>\n";
  }
  double ly = mt + 4;
  for (const auto& s : series) {
    out << "<polyline fill=\"none\" stroke=\"" << s.color
        << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.y.size(); ++i)
      out << px(i) << "," << py(s.y[i]) << " ";
    out << "\"/>\n";
    out << "<text x=\"" << w - mr - 4 << "\" y=\"" << ly
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" "
           "fill=\"" << s.color << "\">" << s.label << "</text>\n";
    ly += 16;
  }
  out << "</svg>\n";
}

}  // namespace ktube
