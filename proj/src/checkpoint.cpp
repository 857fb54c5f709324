#include <bit>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "maskdiff/trainer.hpp"

namespace maskdiff {

namespace {

namespace fs = std::filesystem;

constexpr const char* kFormat = "maskdiff-checkpoint-v1";

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  // strtod accepts "inf"/"nan" as written by %.17g.
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw std::runtime_error("checkpoint: bad number '" + s + "'");
  return v;
}

template <typename T>
std::string join(const std::vector<T>& values, const auto& fmt) {
  std::string out;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += fmt(values[i]);
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(item);
  return out;
}

struct BlobEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void append_le(std::string& blob, std::span<const float> values) {
  for (float f : values) {
    const auto bits = std::bit_cast<uint32_t>(f);
    for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
  }
}

std::vector<float> read_le(const std::string& blob, size_t offset, size_t count) {
  if (offset + count * 4 > blob.size()) throw std::runtime_error("checkpoint: tensor extends past end of blob");
  std::vector<float> out(count);
  for (size_t i = 0; i < count; ++i) {
    uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<uint32_t>(static_cast<unsigned char>(blob[offset + i * 4 + static_cast<size_t>(b)])) << (8 * b);
    }
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

std::vector<BlobEntry> collect_entries(const Checkpoint& c) {
  std::vector<BlobEntry> entries;
  for (const auto& [name, t] : c.params) entries.push_back({"params/" + name, t.shape(), {t.data().begin(), t.data().end()}});
  for (const auto& [name, t] : c.ema_params) entries.push_back({"ema/" + name, t.shape(), {t.data().begin(), t.data().end()}});
  for (const auto& [name, m] : c.optimizer.first_moment) entries.push_back({"adam_m/" + name, {static_cast<int64_t>(m.size())}, m});
  for (const auto& [name, v] : c.optimizer.second_moment) entries.push_back({"adam_v/" + name, {static_cast<int64_t>(v.size())}, v});
  return entries;
}

std::string build_blob(const std::vector<BlobEntry>& entries, std::string* header) {
  std::string blob;
  for (const auto& e : entries) {
    if (header) {
      *header += e.name + '\t' + join(e.shape, [](int64_t d) { return std::to_string(d); }) + '\t' +
                 std::to_string(blob.size()) + '\t' + std::to_string(e.values.size()) + '\n';
    }
    append_le(blob, e.values);
  }
  return blob;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

std::string Checkpoint::id() const {
  const std::string blob = build_blob(collect_entries(*this), nullptr);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(blob)));
  return buf;
}

void save_checkpoint(const Checkpoint& c, const std::string& dir) {
  fs::create_directories(dir);
  std::string header = std::string("# name\tshape\toffset\tcount (") + kFormat + ")\n";
  const std::string blob = build_blob(collect_entries(c), &header);

  std::ostringstream meta;
  meta << "format=" << kFormat << '\n';
  meta << "unet.image_size=" << c.unet.image_size << '\n';
  meta << "unet.image_channels=" << c.unet.image_channels << '\n';
  meta << "unet.in_channels=" << c.unet.in_channels << '\n';
  meta << "unet.base_channels=" << c.unet.base_channels << '\n';
  meta << "unet.channel_multipliers=" << join(c.unet.channel_multipliers, [](int v) { return std::to_string(v); }) << '\n';
  meta << "unet.time_embed_dim=" << c.unet.time_embed_dim << '\n';
  meta << "unet.groups=" << c.unet.groups << '\n';
  meta << "train.learning_rate=" << format_double(c.train.learning_rate) << '\n';
  meta << "train.batch_size=" << c.train.batch_size << '\n';
  meta << "train.accumulation_steps=" << c.train.accumulation_steps << '\n';
  meta << "train.ema_decay=" << format_double(c.train.ema_decay) << '\n';
  meta << "train.patience_epochs=" << c.train.patience_epochs << '\n';
  meta << "train.max_epochs=" << c.train.max_epochs << '\n';
  meta << "train.max_steps=" << c.train.max_steps << '\n';
  meta << "train.seed=" << c.train.seed << '\n';
  meta << "diffusion_steps=" << c.diffusion_steps << '\n';
  meta << "optimizer.step=" << c.optimizer.step << '\n';
  meta << "epoch=" << c.epoch << '\n';
  meta << "best_val_loss=" << format_double(c.best_val_loss) << '\n';
  meta << "val_history=" << join(c.val_history, format_double) << '\n';
  meta << "train_history=" << join(c.train_history, format_double) << '\n';
  meta << "category=" << c.category << '\n';

  write_file(fs::path(dir) / "tensors.txt", header);
  write_file(fs::path(dir) / "tensors.bin", blob);
  write_file(fs::path(dir) / "meta.txt", meta.str());
}

Checkpoint load_checkpoint(const std::string& dir) {
  const std::string blob = read_file(fs::path(dir) / "tensors.bin");
  std::map<std::string, std::string> meta;
  {
    std::istringstream is(read_file(fs::path(dir) / "meta.txt"));
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  if (meta["format"] != kFormat) throw std::runtime_error("checkpoint " + dir + ": unsupported format '" + meta["format"] + "'");
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error("checkpoint " + dir + ": missing key " + key);
    return it->second;
  };

  Checkpoint c;
  c.unet.image_size = std::stoi(get("unet.image_size"));
  c.unet.image_channels = std::stoi(get("unet.image_channels"));
  c.unet.in_channels = std::stoi(get("unet.in_channels"));
  c.unet.base_channels = std::stoi(get("unet.base_channels"));
  c.unet.channel_multipliers.clear();
  for (const auto& s : split(get("unet.channel_multipliers"), ',')) c.unet.channel_multipliers.push_back(std::stoi(s));
  c.unet.time_embed_dim = std::stoi(get("unet.time_embed_dim"));
  c.unet.groups = std::stoi(get("unet.groups"));
  c.train.learning_rate = parse_double(get("train.learning_rate"));
  c.train.batch_size = std::stoi(get("train.batch_size"));
  c.train.accumulation_steps = std::stoi(get("train.accumulation_steps"));
  c.train.ema_decay = parse_double(get("train.ema_decay"));
  c.train.patience_epochs = std::stoi(get("train.patience_epochs"));
  c.train.max_epochs = std::stoi(get("train.max_epochs"));
  c.train.max_steps = std::stoll(get("train.max_steps"));
  c.train.seed = std::stoull(get("train.seed"));
  c.diffusion_steps = std::stoi(get("diffusion_steps"));
  c.optimizer.step = std::stoll(get("optimizer.step"));
  c.epoch = std::stoi(get("epoch"));
  c.best_val_loss = parse_double(get("best_val_loss"));
  for (const auto& s : split(get("val_history"), ',')) c.val_history.push_back(parse_double(s));
  for (const auto& s : split(get("train_history"), ',')) c.train_history.push_back(parse_double(s));
  c.category = get("category");

  std::istringstream header(read_file(fs::path(dir) / "tensors.txt"));
  std::string line;
  while (std::getline(header, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() < 4) throw std::runtime_error("checkpoint header: malformed line '" + line + "'");
    Shape shape;
    for (const auto& s : split(fields[1], ',')) shape.push_back(std::stoll(s));
    const size_t offset = std::stoull(fields[2]);
    const size_t count = std::stoull(fields[3]);
    if (static_cast<int64_t>(count) != shape_numel(shape)) throw std::runtime_error("checkpoint header: count/shape mismatch for " + fields[0]);
    std::vector<float> values = read_le(blob, offset, count);
    const auto slash = fields[0].find('/');
    const std::string group = fields[0].substr(0, slash);
    const std::string name = fields[0].substr(slash + 1);
    if (group == "params") {
      c.params.insert(name, Tensor::from_data(shape, std::move(values), false));
    } else if (group == "ema") {
      c.ema_params.insert(name, Tensor::from_data(shape, std::move(values), false));
    } else if (group == "adam_m") {
      c.optimizer.first_moment[name] = std::move(values);
    } else if (group == "adam_v") {
      c.optimizer.second_moment[name] = std::move(values);
    } else {
      throw std::runtime_error("checkpoint header: unknown group " + group);
    }
  }
  return c;
}

}  // namespace maskdiff
