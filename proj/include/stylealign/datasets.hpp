#pragma once

#include <array>
#include <bitset>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "stylealign/errors.hpp"
#include "stylealign/geometry.hpp"
#include "stylealign/image.hpp"

namespace stylealign {

/// WFLW attribute columns, in the order they appear in the annotation files.
enum class Attribute { Pose = 0, Expression, Illumination, Makeup, Occlusion, Blur };
inline constexpr int kAttributeCount = 6;
inline constexpr std::array<Attribute, kAttributeCount> kAllAttributes = {
    Attribute::Pose, Attribute::Expression, Attribute::Illumination,
    Attribute::Makeup, Attribute::Occlusion, Attribute::Blur};

inline const char* attribute_name(Attribute a) {
  static constexpr const char* names[] = {"pose", "expression", "illumination", "makeup", "occlusion", "blur"};
  return names[static_cast<int>(a)];
}

inline Attribute parse_attribute(std::string_view s) {
  for (Attribute a : kAllAttributes)
    if (s == attribute_name(a)) return a;
  throw InvalidInput("unknown attribute '" + std::string(s) + "'");
}

using AttributeSet = std::bitset<kAttributeCount>;

inline bool has(const AttributeSet& s, Attribute a) { return s.test(static_cast<int>(a)); }

struct Sample {
  std::string id;
  std::string image_path;
  LandmarkSet landmarks;
  BoundingBox bbox;
  std::optional<AttributeSet> attributes;
  bool synthetic = false;
  std::optional<std::string> style_donor;
  std::optional<std::string> recipient;       // synthetic only: whose landmarks were kept
  std::optional<std::string> checkpoint_hash;  // synthetic only: renderer that produced it

  /// Pixel data, when loaded. Not part of the persisted record.
  Image image;

  bool same_record(const Sample& o) const {
    return id == o.id && image_path == o.image_path && landmarks == o.landmarks && bbox == o.bbox &&
           attributes == o.attributes && synthetic == o.synthetic && style_donor == o.style_donor &&
           recipient == o.recipient && checkpoint_hash == o.checkpoint_hash;
  }
};

class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(Scheme scheme) : scheme_(scheme) {}
  Dataset(Scheme scheme, std::vector<Sample> samples) : scheme_(scheme) {
    for (auto& s : samples) push_back(std::move(s));
  }

  void push_back(Sample s) {
    if (!(s.landmarks.scheme() == scheme_))
      throw InvalidInput("sample '" + s.id + "' has scheme " + s.landmarks.scheme().name() + ", dataset uses " +
                         scheme_.name());
    if (s.synthetic != s.style_donor.has_value())
      throw InvalidInput("sample '" + s.id + "': style_donor must be set exactly when synthetic");
    samples_.push_back(std::move(s));
  }

  const Scheme& scheme() const { return scheme_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  Sample& operator[](std::size_t i) { return samples_[i]; }
  const std::vector<Sample>& samples() const { return samples_; }
  auto begin() const { return samples_.begin(); }
  auto end() const { return samples_.end(); }

  /// Samples [first, first + count).
  Dataset slice(std::size_t first, std::size_t count) const {
    if (first + count > samples_.size()) throw InvalidInput("dataset slice out of range");
    Dataset out(scheme_);
    for (std::size_t i = first; i < first + count; ++i) out.samples_.push_back(samples_[i]);
    return out;
  }

  static Dataset concat(const Dataset& a, const Dataset& b) {
    if (!(a.scheme() == b.scheme()))
      throw InvalidInput("cannot combine datasets with schemes " + a.scheme().name() + " and " + b.scheme().name());
    Dataset out = a;
    for (const auto& s : b) out.samples_.push_back(s);
    return out;
  }

  bool same_records(const Dataset& o) const {
    if (!(scheme_ == o.scheme_) || samples_.size() != o.samples_.size()) return false;
    for (std::size_t i = 0; i < samples_.size(); ++i)
      if (!samples_[i].same_record(o.samples_[i])) return false;
    return true;
  }

 private:
  Scheme scheme_ = Scheme::p68();
  std::vector<Sample> samples_;
};

// ---------------------------------------------------------------------------
// Number formatting shared by the text formats.

/// Shortest fixed-point text that parses back to exactly `v`, padded with
/// trailing zeros to at least `min_decimals` fractional digits.
inline std::string format_number(double v, int min_decimals) {
  char buf[512];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed);
  std::string s(buf, res.ptr);
  if (min_decimals > 0) {
    auto dot = s.find('.');
    int have = dot == std::string::npos ? 0 : static_cast<int>(s.size() - dot - 1);
    if (dot == std::string::npos) s += '.';
    s.append(static_cast<std::size_t>(std::max(0, min_decimals - have)), '0');
  }
  return s;
}

inline bool parse_number(std::string_view tok, double& out) {
  if (tok.empty()) return false;
  if (tok.front() == '+') tok.remove_prefix(1);
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size() && std::isfinite(out);
}

namespace detail {

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 300W points files

/// Parses a `.pts` file: `version:` and `n_points:` headers, then the points
/// between `{` and `}`, one "x y" pair per line.
inline LandmarkSet parse_pts(std::string_view text) {
  const auto lines = detail::split_lines(text);
  std::size_t i = 0;
  auto next_nonempty = [&]() -> std::size_t {
    while (i < lines.size() && detail::trim(lines[i]).empty()) ++i;
    return i;
  };

  int n_points = -1;
  bool have_version = false;
  while (next_nonempty() < lines.size()) {
    const std::string line = detail::trim(lines[i]);
    if (line == "{") break;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw ParseError("expected header 'key: value' or '{'", i + 1);
    const std::string key = detail::trim(line.substr(0, colon));
    const std::string value = detail::trim(line.substr(colon + 1));
    if (key == "version") {
      have_version = true;
    } else if (key == "n_points") {
      double v;
      if (!parse_number(value, v) || v < 0 || v != std::floor(v))
        throw ParseError("n_points is not a non-negative integer: '" + value + "'", i + 1);
      n_points = static_cast<int>(v);
    } else {
      throw ParseError("unknown header '" + key + "'", i + 1);
    }
    ++i;
  }
  if (!have_version) throw ParseError("missing 'version:' header", 0);
  if (n_points < 0) throw ParseError("missing 'n_points:' header", 0);
  if (i >= lines.size()) throw ParseError("missing '{' before point list", lines.size());
  ++i;  // past '{'

  std::vector<Point> pts;
  bool closed = false;
  for (; i < lines.size(); ++i) {
    const std::string line = detail::trim(lines[i]);
    if (line.empty()) continue;
    if (line == "}") {
      closed = true;
      ++i;
      break;
    }
    const auto toks = detail::split_ws(line);
    if (toks.size() != 2) throw ParseError("expected 'x y', got '" + line + "'", i + 1);
    Point p;
    if (!parse_number(toks[0], p.x)) throw ParseError("non-numeric token '" + std::string(toks[0]) + "'", i + 1);
    if (!parse_number(toks[1], p.y)) throw ParseError("non-numeric token '" + std::string(toks[1]) + "'", i + 1);
    pts.push_back(p);
    if (static_cast<int>(pts.size()) > n_points)
      throw ParseError("more points than n_points: " + std::to_string(n_points), i + 1);
  }
  if (!closed) throw ParseError("truncated point list: missing '}'", lines.size());
  if (static_cast<int>(pts.size()) != n_points)
    throw ParseError("n_points: " + std::to_string(n_points) + " but " + std::to_string(pts.size()) +
                         " points listed",
                     i);
  for (; i < lines.size(); ++i)
    if (!detail::trim(lines[i]).empty()) throw ParseError("unexpected content after '}'", i + 1);
  return LandmarkSet(Scheme::for_count(n_points), std::move(pts));
}

/// Canonical `.pts` text: coordinates use at least three decimals, more when
/// needed to reproduce the exact double.
inline std::string serialize_pts(const LandmarkSet& landmarks) {
  std::string out = "version: 1\nn_points: " + std::to_string(landmarks.size()) + "\n{\n";
  for (const auto& p : landmarks.points()) out += format_number(p.x, 3) + " " + format_number(p.y, 3) + "\n";
  out += "}\n";
  return out;
}

inline LandmarkSet load_pts(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_pts(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.line());
  }
}

// ---------------------------------------------------------------------------
// WFLW annotation lines

inline constexpr int kWflwLandmarks = 98;
inline constexpr int kWflwFields = 2 * kWflwLandmarks + 4 + kAttributeCount + 1;  // 207

/// One line of the WFLW list files: 196 landmark coordinates, the face
/// rectangle (x_min y_min x_max y_max), six 0/1 attribute flags in the order
/// pose, expression, illumination, make-up, occlusion, blur, and the image name.
inline Sample parse_wflw_line(std::string_view line) {
  const auto toks = detail::split_ws(line);
  if (static_cast<int>(toks.size()) != kWflwFields)
    throw ParseError("WFLW line has " + std::to_string(toks.size()) + " fields, expected " +
                         std::to_string(kWflwFields),
                     0);
  std::vector<double> v(2 * kWflwLandmarks + 4);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!parse_number(toks[i], v[i]))
      throw ParseError("field " + std::to_string(i + 1) + " is not numeric: '" + std::string(toks[i]) + "'", 0);
  std::vector<Point> pts(kWflwLandmarks);
  for (int i = 0; i < kWflwLandmarks; ++i) pts[i] = {v[2 * i], v[2 * i + 1]};
  AttributeSet attrs;
  for (int a = 0; a < kAttributeCount; ++a) {
    const auto tok = toks[2 * kWflwLandmarks + 4 + a];
    if (tok != "0" && tok != "1")
      throw ParseError("attribute field " + std::to_string(a + 1) + " must be 0 or 1, got '" + std::string(tok) + "'",
                       0);
    attrs.set(a, tok == "1");
  }
  Sample s;
  s.image_path = std::string(toks.back());
  s.id = s.image_path;
  s.landmarks = LandmarkSet(Scheme::p98(), std::move(pts));
  const std::size_t b = 2 * kWflwLandmarks;
  s.bbox = BoundingBox(v[b], v[b + 1], v[b + 2], v[b + 3]);
  s.attributes = attrs;
  return s;
}

/// WFLW line text: coordinates with at least six decimals, the box as
/// integers when integral.
inline std::string serialize_wflw_line(const Sample& s) {
  if (s.landmarks.scheme().kind != SchemeKind::P98) throw InvalidInput("WFLW lines require the P98 scheme");
  std::string out;
  for (const auto& p : s.landmarks.points()) out += format_number(p.x, 6) + " " + format_number(p.y, 6) + " ";
  for (double b : {s.bbox.x_min(), s.bbox.y_min(), s.bbox.x_max(), s.bbox.y_max()}) out += format_number(b, 0) + " ";
  const AttributeSet attrs = s.attributes.value_or(AttributeSet{});
  for (int a = 0; a < kAttributeCount; ++a) out += attrs.test(a) ? "1 " : "0 ";
  out += s.image_path;
  return out;
}

/// Reads a whole WFLW list file; ids become "<line>:<image name>" so several
/// faces from one image stay distinct.
inline Dataset load_wflw_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Dataset ds(Scheme::p98());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    try {
      Sample s = parse_wflw_line(line);
      s.id = std::to_string(lineno) + ":" + s.image_path;
      ds.push_back(std::move(s));
    } catch (const ParseError& e) {
      throw ParseError(path + ": " + e.what(), lineno);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Manifest: a header record followed by one JSON object per sample and line.

inline constexpr const char* kManifestFormat = "stylealign-manifest";
inline constexpr int kManifestVersion = 1;

inline nlohmann::json sample_to_json(const Sample& s) {
  nlohmann::json j;
  j["id"] = s.id;
  j["image_path"] = s.image_path;
  j["scheme"] = s.landmarks.scheme().name();
  std::vector<double> flat;
  for (const auto& p : s.landmarks.points()) flat.insert(flat.end(), {p.x, p.y});
  j["landmarks"] = flat;
  j["bbox"] = {s.bbox.x_min(), s.bbox.y_min(), s.bbox.x_max(), s.bbox.y_max()};
  if (s.attributes) {
    std::vector<std::string> names;
    for (Attribute a : kAllAttributes)
      if (has(*s.attributes, a)) names.emplace_back(attribute_name(a));
    j["attributes"] = names;
  } else {
    j["attributes"] = nullptr;
  }
  j["synthetic"] = s.synthetic;
  j["style_donor"] = s.style_donor ? nlohmann::json(*s.style_donor) : nlohmann::json(nullptr);
  if (s.recipient) j["recipient"] = *s.recipient;
  if (s.checkpoint_hash) j["checkpoint"] = *s.checkpoint_hash;
  return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {"id",          "image_path", "scheme",    "landmarks",
                                                 "bbox",        "attributes", "synthetic", "style_donor",
                                                 "recipient",   "checkpoint"};
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw InvalidInput("unknown field '" + k + "'");
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.image_path = j.at("image_path").get<std::string>();
  const Scheme scheme = Scheme::parse(j.at("scheme").get<std::string>());
  const auto flat = j.at("landmarks").get<std::vector<double>>();
  if (flat.size() % 2 != 0) throw InvalidInput("landmarks list has odd length");
  std::vector<Point> pts;
  for (std::size_t i = 0; i < flat.size(); i += 2) pts.push_back({flat[i], flat[i + 1]});
  s.landmarks = LandmarkSet(scheme, std::move(pts));
  const auto bb = j.at("bbox").get<std::vector<double>>();
  if (bb.size() != 4) throw InvalidInput("bbox must have 4 values");
  s.bbox = BoundingBox(bb[0], bb[1], bb[2], bb[3]);
  if (!j.at("attributes").is_null()) {
    AttributeSet attrs;
    for (const auto& name : j.at("attributes").get<std::vector<std::string>>())
      attrs.set(static_cast<int>(parse_attribute(name)));
    s.attributes = attrs;
  }
  s.synthetic = j.at("synthetic").get<bool>();
  if (!j.at("style_donor").is_null()) s.style_donor = j.at("style_donor").get<std::string>();
  if (j.contains("recipient")) s.recipient = j["recipient"].get<std::string>();
  if (j.contains("checkpoint")) s.checkpoint_hash = j["checkpoint"].get<std::string>();
  return s;
}

inline std::string manifest_text(const Dataset& ds) {
  nlohmann::json header = {{"format", kManifestFormat},
                           {"version", kManifestVersion},
                           {"scheme", ds.scheme().name()},
                           {"n", ds.size()}};
  std::string out = header.dump() + "\n";
  for (const auto& s : ds) out += sample_to_json(s).dump() + "\n";
  return out;
}

inline void save_manifest(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << manifest_text(ds);
  if (!out) throw IoError("short write to " + path.string());
}

inline Dataset parse_manifest(std::string_view text) {
  const auto lines = detail::split_lines(text);
  std::size_t i = 0;
  while (i < lines.size() && detail::trim(lines[i]).empty()) ++i;
  if (i == lines.size()) throw ParseError("manifest is empty (missing header record)", 0);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(lines[i]);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed manifest header: ") + e.what(), i + 1);
  }
  if (!header.is_object() || header.value("format", "") != kManifestFormat)
    throw ParseError("not a stylealign manifest", i + 1);
  if (header.value("version", -1) != kManifestVersion)
    throw ParseError("unsupported manifest version " + header.value("version", nlohmann::json()).dump(), i + 1);
  Dataset ds(Scheme::parse(header.at("scheme").get<std::string>()));
  const std::size_t expected = header.at("n").get<std::size_t>();
  std::size_t record = 0;
  for (++i; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    try {
      ds.push_back(sample_from_json(nlohmann::json::parse(lines[i])));
    } catch (const std::exception& e) {
      throw ParseError("malformed record " + std::to_string(record) + ": " + e.what(), i + 1);
    }
    ++record;
  }
  if (record != expected)
    throw ParseError("manifest header announces " + std::to_string(expected) + " records, found " +
                         std::to_string(record),
                     0);
  return ds;
}

inline Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

/// Loads every sample's image, resolving relative paths against `root`.
inline void load_images(Dataset& ds, const std::filesystem::path& root) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::filesystem::path p(ds[i].image_path);
    ds[i].image = read_pnm((p.is_absolute() ? p : root / p).string());
  }
}

}  // namespace stylealign
