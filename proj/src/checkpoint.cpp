#include "dosepred/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dosepred/error.hpp"

namespace dosepred {

namespace {

constexpr const char* kFormat = "dosepred-checkpoint";
constexpr int kVersion = 1;

template <typename Range>
void append_f32(std::string& out, const Range& values) {
  for (auto v : values) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    char b[4];
    std::memcpy(b, &bits, 4);
    out.append(b, 4);
  }
}

std::vector<float> take_f32(const std::string& blob, std::size_t& pos, std::size_t n,
                            const std::filesystem::path& file) {
  if (blob.size() - pos < 4 * n)
    fail_io("checkpoint " + file.string() + ": truncated payload");
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, blob.data() + pos + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    out[i] = std::bit_cast<float>(bits);
  }
  pos += 4 * n;
  return out;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& file, UNet3D<T>& net, int epoch,
                     const AdamState<T>* adam, const nlohmann::ordered_json& extra) {
  nlohmann::ordered_json h;
  h["format"] = kFormat;
  h["version"] = kVersion;
  h["net"] = to_json(net.config());
  h["epoch"] = epoch;
  for (auto it = extra.begin(); it != extra.end(); ++it) h[it.key()] = it.value();

  std::string payload;
  auto tensors = nlohmann::ordered_json::array();
  std::size_t n_params = 0;
  for (const auto& p : net.parameters()) {
    tensors.push_back({{"name", p.name}, {"count", p.value.size()}});
    append_f32(payload, p.value);
    n_params += p.value.size();
  }
  std::size_t n_buffers = 0;
  for (const auto& b : net.buffers()) {
    append_f32(payload, b);
    n_buffers += b.size();
  }
  h["tensors"] = tensors;
  h["param_count"] = n_params;
  h["buffer_count"] = n_buffers;
  if (adam) {
    for (const auto& m : adam->m) append_f32(payload, m);
    for (const auto& v : adam->v) append_f32(payload, v);
    h["adam"] = {{"t", adam->t}};
  }

  std::filesystem::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail_io("cannot open " + tmp.string() + " for writing");
    out << h.dump() << '\n';
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) fail_io("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, file, ec);
  if (ec) fail_io("cannot rename " + tmp.string() + " to " + file.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail_io("cannot open checkpoint " + file.string());
  std::string line;
  if (!std::getline(in, line)) fail_io("checkpoint " + file.string() + ": missing header");
  Checkpoint c;
  try {
    c.header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail_io("checkpoint " + file.string() + ": bad header: " + e.what());
  }
  if (c.header.value("format", std::string{}) != kFormat)
    fail_io("checkpoint " + file.string() + ": not a dosepred checkpoint");
  if (c.header.value("version", 0) != kVersion)
    fail_io("checkpoint " + file.string() + ": unsupported version");
  c.net = net_config_from_json(c.header.at("net"));
  c.epoch = c.header.value("epoch", 0);

  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  const auto n_params = c.header.at("param_count").get<std::size_t>();
  const auto n_buffers = c.header.at("buffer_count").get<std::size_t>();
  c.params = take_f32(blob, pos, n_params, file);
  c.buffers = take_f32(blob, pos, n_buffers, file);
  if (c.header.contains("adam")) {
    c.has_adam = true;
    c.adam_t = c.header["adam"].at("t").get<std::int64_t>();
    c.adam_m = take_f32(blob, pos, n_params, file);
    c.adam_v = take_f32(blob, pos, n_params, file);
  }
  if (pos != blob.size()) fail_io("checkpoint " + file.string() + ": trailing bytes");
  return c;
}

template <typename T>
void restore_model(const Checkpoint& ckpt, UNet3D<T>& net) {
  if (!(ckpt.net == net.config())) fail_validation("checkpoint network config does not match model");
  std::size_t pos = 0;
  for (auto& p : net.parameters()) {
    if (pos + p.value.size() > ckpt.params.size())
      fail_validation("checkpoint parameter block too short at '" + p.name + "'");
    for (auto& v : p.value) v = static_cast<T>(ckpt.params[pos++]);
  }
  if (pos != ckpt.params.size()) fail_validation("checkpoint has extra parameters");
  pos = 0;
  for (auto& b : net.buffers()) {
    if (pos + b.size() > ckpt.buffers.size()) fail_validation("checkpoint buffer block too short");
    for (auto& v : b) v = static_cast<T>(ckpt.buffers[pos++]);
  }
  if (pos != ckpt.buffers.size()) fail_validation("checkpoint has extra buffers");
}

template <typename T>
AdamState<T> restore_adam(const Checkpoint& ckpt, UNet3D<T>& net) {
  const auto params = net.parameters();
  AdamState<T> s = AdamState<T>::zeros_like(params);
  if (!ckpt.has_adam) fail_validation("checkpoint carries no optimizer state");
  std::size_t pos = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < s.m[k].size(); ++i, ++pos) {
      s.m[k][i] = static_cast<T>(ckpt.adam_m.at(pos));
      s.v[k][i] = static_cast<T>(ckpt.adam_v.at(pos));
    }
  }
  s.t = ckpt.adam_t;
  return s;
}

template void save_checkpoint<float>(const std::filesystem::path&, UNet3D<float>&, int,
                                     const AdamState<float>*, const nlohmann::ordered_json&);
template void save_checkpoint<double>(const std::filesystem::path&, UNet3D<double>&, int,
                                      const AdamState<double>*, const nlohmann::ordered_json&);
template void restore_model<float>(const Checkpoint&, UNet3D<float>&);
template void restore_model<double>(const Checkpoint&, UNet3D<double>&);
template AdamState<float> restore_adam<float>(const Checkpoint&, UNet3D<float>&);
template AdamState<double> restore_adam<double>(const Checkpoint&, UNet3D<double>&);

}  // namespace dosepred
