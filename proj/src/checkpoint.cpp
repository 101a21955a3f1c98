#include "cxrage/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "cxrage/fsutil.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace cxrage {

namespace {

constexpr char kMagic[4] = {'A', 'G', 'S', 'C'};
constexpr std::uint32_t kVersion = 1;

[[noreturn]] void corrupt(const std::string& path, const std::string& what) {
    throw std::runtime_error("checkpoint '" + path + "': " + what);
}

nlohmann::json spec_to_json(const NetworkSpec& s) {
    nlohmann::json j;
    j["input_h"] = s.input_h;
    j["input_w"] = s.input_w;
    j["input_channels"] = s.input_channels;
    j["initial_channels"] = s.initial_channels;
    j["growth_rate"] = s.growth_rate;
    j["block_layers"] = s.block_layers;
    j["compression"] = s.compression;
    j["bottleneck"] = s.bottleneck;
    j["stem"] = s.stem == StemKind::Conv7x7Pooled ? "conv7x7_pooled" : "conv3x3";
    j["seed"] = s.seed;
    return j;
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
    NetworkSpec s;
    s.input_h = j.at("input_h").get<std::size_t>();
    s.input_w = j.at("input_w").get<std::size_t>();
    s.input_channels = j.at("input_channels").get<std::size_t>();
    s.initial_channels = j.at("initial_channels").get<std::size_t>();
    s.growth_rate = j.at("growth_rate").get<std::size_t>();
    s.block_layers = j.at("block_layers").get<std::vector<std::size_t>>();
    s.compression = j.at("compression").get<double>();
    s.bottleneck = j.at("bottleneck").get<bool>();
    const std::string stem = j.at("stem").get<std::string>();
    if (stem == "conv7x7_pooled")
        s.stem = StemKind::Conv7x7Pooled;
    else if (stem == "conv3x3")
        s.stem = StemKind::Conv3x3;
    else
        throw std::runtime_error("unknown stem kind '" + stem + "'");
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

template <typename U>
void append_le(std::string& out, U value) {
    char buf[sizeof(U)];
    std::memcpy(buf, &value, sizeof(U));
    out.append(buf, sizeof(U));
}

}  // namespace

template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, double best_val_loss, std::size_t epoch) {
    Checkpoint ckpt;
    ckpt.spec = net.spec;
    ckpt.best_val_loss = best_val_loss;
    ckpt.epoch = epoch;
    ckpt.precision = static_cast<int>(sizeof(T) * 8);
    ckpt.params.reserve(net.params.size());
    for (const auto& p : net.params) {
        CheckpointParam cp;
        cp.name = p.name;
        cp.shape = p.tensor.shape;
        cp.bytes.resize(p.tensor.data.size() * sizeof(T));
        std::memcpy(cp.bytes.data(), p.tensor.data.data(), cp.bytes.size());
        ckpt.params.push_back(std::move(cp));
    }
    return ckpt;
}

template <typename T>
Network<T> checkpoint_to_network(const Checkpoint& ckpt) {
    if (ckpt.precision != static_cast<int>(sizeof(T) * 8))
        throw std::runtime_error("checkpoint precision is " + std::to_string(ckpt.precision) +
                                 "-bit, requested " + std::to_string(sizeof(T) * 8) + "-bit");
    Network<T> net = build_network<T>(ckpt.spec);
    if (net.params.size() != ckpt.params.size())
        throw std::runtime_error("checkpoint parameter list does not match its spec");
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        const CheckpointParam& cp = ckpt.params[i];
        NamedTensor<T>& dst = net.params[i];
        if (cp.name != dst.name || cp.shape != dst.tensor.shape)
            throw std::runtime_error("checkpoint parameter '" + cp.name +
                                     "' does not match the architecture's parameter '" + dst.name +
                                     "'");
        if (cp.bytes.size() != dst.tensor.data.size() * sizeof(T))
            throw std::runtime_error("checkpoint parameter '" + cp.name +
                                     "' has the wrong byte length");
        std::memcpy(dst.tensor.data.data(), cp.bytes.data(), cp.bytes.size());
    }
    return net;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::json header;
    header["spec"] = spec_to_json(ckpt.spec);
    header["precision"] = ckpt.precision;
    if (std::isfinite(ckpt.best_val_loss))
        header["best_val_loss"] = ckpt.best_val_loss;
    else
        header["best_val_loss"] = nullptr;
    header["epoch"] = ckpt.epoch;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : ckpt.params) params.push_back({{"name", p.name}, {"shape", p.shape}});
    header["params"] = std::move(params);
    const std::string header_text = header.dump();

    std::string out;
    out.reserve(16 + header_text.size());
    out.append(kMagic, 4);
    append_le(out, kVersion);
    append_le(out, static_cast<std::uint64_t>(header_text.size()));
    out += header_text;
    for (const auto& p : ckpt.params)
        out.append(reinterpret_cast<const char*>(p.bytes.data()), p.bytes.size());
    atomic_write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string raw = read_file(path);
    if (raw.size() < 16) corrupt(path, "truncated before the header (file too short)");
    if (std::memcmp(raw.data(), kMagic, 4) != 0) corrupt(path, "bad magic bytes (not a checkpoint)");
    std::uint32_t version = 0;
    std::memcpy(&version, raw.data() + 4, 4);
    if (version != kVersion)
        corrupt(path, "unsupported format_version " + std::to_string(version) + " (expected " +
                          std::to_string(kVersion) + ")");
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, raw.data() + 8, 8);
    if (raw.size() < 16 + header_len) corrupt(path, "truncated inside the JSON header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(raw.substr(16, header_len));
    } catch (const nlohmann::json::exception& e) {
        corrupt(path, std::string("unparseable JSON header: ") + e.what());
    }

    Checkpoint ckpt;
    ckpt.format_version = version;
    try {
        ckpt.spec = spec_from_json(header.at("spec"));
        ckpt.precision = header.at("precision").get<int>();
        ckpt.epoch = header.at("epoch").get<std::size_t>();
        if (header.at("best_val_loss").is_null())
            ckpt.best_val_loss = std::numeric_limits<double>::infinity();
        else
            ckpt.best_val_loss = header.at("best_val_loss").get<double>();
        for (const auto& p : header.at("params")) {
            CheckpointParam cp;
            cp.name = p.at("name").get<std::string>();
            cp.shape = p.at("shape").get<Shape>();
            ckpt.params.push_back(std::move(cp));
        }
    } catch (const nlohmann::json::exception& e) {
        corrupt(path, std::string("malformed header fields: ") + e.what());
    }
    if (ckpt.precision != 32 && ckpt.precision != 64)
        corrupt(path, "precision must be 32 or 64, got " + std::to_string(ckpt.precision));

    const std::size_t elem = static_cast<std::size_t>(ckpt.precision) / 8;
    std::size_t offset = 16 + header_len;
    for (auto& p : ckpt.params) {
        const std::size_t bytes = shape_numel(p.shape) * elem;
        if (raw.size() < offset + bytes)
            corrupt(path, "truncated inside parameter '" + p.name + "'");
        p.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(offset),
                       raw.begin() + static_cast<std::ptrdiff_t>(offset + bytes));
        offset += bytes;
    }
    if (offset != raw.size())
        corrupt(path, "trailing bytes after the last parameter");
    return ckpt;
}

template Checkpoint make_checkpoint<float>(const Network<float>&, double, std::size_t);
template Checkpoint make_checkpoint<double>(const Network<double>&, double, std::size_t);
template Network<float> checkpoint_to_network<float>(const Checkpoint&);
template Network<double> checkpoint_to_network<double>(const Checkpoint&);

}  // namespace cxrage
