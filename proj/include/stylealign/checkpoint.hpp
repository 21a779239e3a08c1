#pragma once

// Binary container for model checkpoints.
//
//   STYLEALIGN-CONTAINER 1\n
//   <header byte length, decimal>\n
//   <JSON header>
//   <raw little-endian tensor payloads, in header order>
//
// The header carries a format tag (e.g. "disentangler"), a format version,
// free-form metadata and a table of {name, dtype, shape, offset, bytes}.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "stylealign/errors.hpp"
#include "stylealign/hash.hpp"
#include "stylealign/tensor.hpp"

namespace stylealign {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

inline constexpr const char* kContainerMagic = "STYLEALIGN-CONTAINER 1";

struct ContainerTensor {
  std::string name;
  std::string dtype;  // "f32" or "f64"
  Shape shape;
  std::vector<unsigned char> bytes;
};

template <typename T>
constexpr const char* dtype_tag() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else if constexpr (std::is_same_v<T, double>) return "f64";
  else static_assert(sizeof(T) == 0, "unsupported tensor type");
}

struct Container {
  std::string format;
  int version = 1;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ContainerTensor> tensors;

  template <typename T>
  void put(const std::string& name, const Shape& shape, const T* data, std::size_t n) {
    ContainerTensor t{name, dtype_tag<T>(), shape, std::vector<unsigned char>(n * sizeof(T))};
    std::memcpy(t.bytes.data(), data, n * sizeof(T));
    tensors.push_back(std::move(t));
  }
  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    put(name, t.shape(), t.data(), t.size());
  }
  template <typename T>
  void put(const std::string& name, const std::vector<T>& v) {
    put(name, Shape{static_cast<int>(v.size())}, v.data(), v.size());
  }

  const ContainerTensor& find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw InvalidInput("checkpoint has no tensor '" + name + "'");
  }

  template <typename T>
  std::vector<T> get_vector(const std::string& name) const {
    const auto& t = find(name);
    if (t.dtype != dtype_tag<T>())
      throw InvalidInput("tensor '" + name + "' has dtype " + t.dtype + ", expected " + dtype_tag<T>());
    std::vector<T> out(t.bytes.size() / sizeof(T));
    std::memcpy(out.data(), t.bytes.data(), t.bytes.size());
    return out;
  }
  template <typename T>
  Tensor<T> get(const std::string& name) const {
    return Tensor<T>(find(name).shape, get_vector<T>(name));
  }

  std::string serialize() const {
    nlohmann::json header;
    header["format"] = format;
    header["version"] = version;
    header["meta"] = meta;
    nlohmann::json table = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& t : tensors) {
      table.push_back({{"name", t.name}, {"dtype", t.dtype}, {"shape", t.shape}, {"offset", offset},
                       {"bytes", t.bytes.size()}});
      offset += t.bytes.size();
    }
    header["tensors"] = table;
    const std::string h = header.dump();
    std::string out = std::string(kContainerMagic) + "\n" + std::to_string(h.size()) + "\n" + h;
    out.reserve(out.size() + offset);
    for (const auto& t : tensors) out.append(reinterpret_cast<const char*>(t.bytes.data()), t.bytes.size());
    return out;
  }

  static Container deserialize(const std::string& bytes) {
    std::istringstream in(bytes);
    std::string magic, len_line;
    if (!std::getline(in, magic) || magic != kContainerMagic) throw InvalidInput("not a stylealign checkpoint");
    if (!std::getline(in, len_line)) throw InvalidInput("checkpoint header truncated");
    std::size_t hlen = 0;
    try {
      hlen = std::stoull(len_line);
    } catch (const std::exception&) {
      throw InvalidInput("checkpoint header length is malformed");
    }
    const std::size_t hstart = magic.size() + len_line.size() + 2;
    if (hstart + hlen > bytes.size()) throw InvalidInput("checkpoint header truncated");
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(bytes.substr(hstart, hlen));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    Container c;
    c.format = header.at("format").get<std::string>();
    c.version = header.at("version").get<int>();
    c.meta = header.at("meta");
    const std::size_t data_start = hstart + hlen;
    for (const auto& e : header.at("tensors")) {
      ContainerTensor t;
      t.name = e.at("name").get<std::string>();
      t.dtype = e.at("dtype").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      const std::size_t off = e.at("offset").get<std::size_t>(), n = e.at("bytes").get<std::size_t>();
      if (data_start + off + n > bytes.size()) throw InvalidInput("checkpoint payload truncated at '" + t.name + "'");
      t.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_start + off),
                     bytes.begin() + static_cast<std::ptrdiff_t>(data_start + off + n));
      c.tensors.push_back(std::move(t));
    }
    return c;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
  }

  static Container load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
  }

  std::string content_hash() const { return hash_string(serialize()); }

  void expect_format(const std::string& tag, int ver) const {
    if (format != tag)
      throw InvalidInput("checkpoint format is '" + format + "', expected '" + tag + "'");
    if (version != ver)
      throw InvalidInput("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(ver) + ")");
  }
};

}  // namespace stylealign
