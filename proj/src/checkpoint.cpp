#include "limn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "limn/error.hpp"

namespace limn {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "limn-checkpoint-v1";

void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

double get_f64(const std::string& in, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(in[at + static_cast<std::size_t>(i)]);
  return std::bit_cast<double>(bits);
}

void add_tensor(json& list, std::string& payload, const std::string& name, const Shape& shape,
                std::span<const double> values) {
  list.push_back({{"name", name}, {"shape", shape}, {"offset", payload.size() / 8}});
  for (double v : values) put_f64(payload, v);
}

}  // namespace

std::filesystem::path payload_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

void save_checkpoint(const std::filesystem::path& manifest, const Checkpoint& ckpt) {
  json tensors = json::array();
  std::string payload;
  for (const auto& [name, t] : ckpt.params.entries()) add_tensor(tensors, payload, "param/" + name, t.shape(), t.data());
  json doc;
  doc["format"] = kFormat;
  doc["config"] = ckpt.config;
  doc["extra"] = ckpt.extra;
  if (ckpt.optimizer) {
    const auto& st = *ckpt.optimizer;
    doc["optimizer"] = {{"kind", "adam"},
                        {"step", st.step},
                        {"lr", st.config.lr},
                        {"beta1", st.config.beta1},
                        {"beta2", st.config.beta2},
                        {"eps", st.config.eps}};
    for (const auto& [name, m] : st.first_moment) add_tensor(tensors, payload, "adam_m/" + name, {m.size()}, m);
    for (const auto& [name, v] : st.second_moment) add_tensor(tensors, payload, "adam_v/" + name, {v.size()}, v);
  }
  const auto bin = payload_path(manifest);
  doc["payload"] = bin.filename().string();
  doc["tensors"] = tensors;

  std::ofstream mf(manifest, std::ios::binary | std::ios::trunc);
  if (!mf) throw IoError("cannot write checkpoint manifest " + manifest.string());
  mf << doc.dump(1) << '\n';
  std::ofstream bf(bin, std::ios::binary | std::ios::trunc);
  if (!bf) throw IoError("cannot write checkpoint payload " + bin.string());
  bf.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!mf || !bf) throw IoError("short write while saving checkpoint " + manifest.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest) {
  std::ifstream mf(manifest, std::ios::binary);
  if (!mf) throw IoError("cannot open checkpoint manifest " + manifest.string());
  json doc;
  try {
    doc = json::parse(mf);
  } catch (const json::exception& e) {
    throw ParseError("malformed checkpoint manifest " + manifest.string() + ": " + e.what());
  }
  if (doc.value("format", "") != kFormat) throw ParseError("unsupported checkpoint format in " + manifest.string());

  const auto bin = manifest.parent_path() / doc.at("payload").get<std::string>();
  std::ifstream bf(bin, std::ios::binary);
  if (!bf) throw IoError("cannot open checkpoint payload " + bin.string());
  const std::string payload((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  if (payload.size() % 8 != 0) throw ParseError("checkpoint payload length is not a multiple of 8");

  Checkpoint ckpt;
  ckpt.config = doc.at("config");
  ckpt.extra = doc.value("extra", json::object());
  if (doc.contains("optimizer")) {
    const auto& o = doc["optimizer"];
    AdamState st;
    st.step = o.at("step").get<std::uint64_t>();
    st.config.lr = o.at("lr").get<double>();
    st.config.beta1 = o.at("beta1").get<double>();
    st.config.beta2 = o.at("beta2").get<double>();
    st.config.eps = o.at("eps").get<double>();
    ckpt.optimizer = std::move(st);
  }
  for (const auto& t : doc.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::size_t>();
    const std::size_t n = shape_numel(shape);
    if ((offset + n) * 8 > payload.size()) throw ParseError("tensor " + name + " runs past the payload end");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = get_f64(payload, (offset + i) * 8);
    if (name.rfind("param/", 0) == 0) {
      ckpt.params.add(name.substr(6), Tensor::from(shape, std::move(values)));
    } else if (name.rfind("adam_m/", 0) == 0 && ckpt.optimizer) {
      ckpt.optimizer->first_moment[name.substr(7)] = std::move(values);
    } else if (name.rfind("adam_v/", 0) == 0 && ckpt.optimizer) {
      ckpt.optimizer->second_moment[name.substr(7)] = std::move(values);
    } else {
      throw ParseError("unexpected tensor entry " + name);
    }
  }
  return ckpt;
}

}  // namespace limn
