#include "cats/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace cats {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'T', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const char* what) {
    const auto n = read_pod<std::uint32_t>(in, what);
    if (n > (1u << 24)) throw CheckpointError(std::string("implausible string length in ") + what);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    return s;
}

void write_tensor(std::ostream& out, const Tensor& t) {
    write_string(out, t.name());
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) write_pod<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(Real)));
}

}  // namespace

std::string cats_config_to_text(const CatsConfig& cfg) {
    std::ostringstream os;
    os << "input_length=" << cfg.input_length << '\n';
    os << "horizon=" << cfg.horizon << '\n';
    os << "patch_length=" << cfg.patch_length << '\n';
    os << "patch_stride=" << cfg.patch_stride << '\n';
    os << "end_padding=" << (cfg.end_padding ? 1 : 0) << '\n';
    os << "embed_dim=" << cfg.embed_dim << '\n';
    os << "heads=" << cfg.heads << '\n';
    os << "layers=" << cfg.layers << '\n';
    os << "ffn_width=" << cfg.ffn_width << '\n';
    os << "mask_p_min=" << double(cfg.mask_p_min) << '\n';
    os << "mask_p_max=" << double(cfg.mask_p_max) << '\n';
    os << "query_sharing_across_channels=" << (cfg.query_sharing_across_channels ? 1 : 0) << '\n';
    os << "channels=" << cfg.channels << '\n';
    os << "dropout=" << double(cfg.dropout_p) << '\n';
    os << "attention_kinds=";
    const auto kinds = cfg.kinds();
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        if (i) os << ',';
        os << to_string(kinds[i]);
    }
    os << '\n';
    return os.str();
}

CatsConfig cats_config_from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CheckpointError("bad config line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw CheckpointError(std::string("config missing key '") + key + "'");
        return it->second;
    };
    CatsConfig cfg;
    cfg.input_length = std::stoull(get("input_length"));
    cfg.horizon = std::stoull(get("horizon"));
    cfg.patch_length = std::stoull(get("patch_length"));
    cfg.patch_stride = std::stoull(get("patch_stride"));
    cfg.end_padding = get("end_padding") == "1";
    cfg.embed_dim = std::stoull(get("embed_dim"));
    cfg.heads = std::stoull(get("heads"));
    cfg.layers = std::stoull(get("layers"));
    cfg.ffn_width = std::stoull(get("ffn_width"));
    cfg.mask_p_min = Real(std::stod(get("mask_p_min")));
    cfg.mask_p_max = Real(std::stod(get("mask_p_max")));
    cfg.query_sharing_across_channels = get("query_sharing_across_channels") == "1";
    cfg.channels = std::stoull(get("channels"));
    cfg.dropout_p = Real(std::stod(get("dropout")));
    cfg.attention_kinds.clear();
    std::istringstream ks(get("attention_kinds"));
    std::string tok;
    while (std::getline(ks, tok, ','))
        if (!tok.empty()) cfg.attention_kinds.push_back(attention_kind_from_string(tok));
    cfg.validate();
    return cfg;
}

void save_checkpoint(const std::string& path, const CatsConfig& cfg, const ModelParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open " + path + " for writing");
    out.write(kMagic, sizeof kMagic);
    write_pod<std::uint32_t>(out, kVersion);
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(sizeof(Real)));
    write_string(out, cats_config_to_text(cfg));
    const auto tensors = params.all();
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const Tensor& t : tensors) write_tensor(out, t);
    if (!out) throw CheckpointError("write failed for " + path);
}

std::pair<CatsConfig, ModelParams> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw CheckpointError(path + " is not a checkpoint file (bad magic)");
    const auto version = read_pod<std::uint32_t>(in, "version");
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto dtype = read_pod<std::uint8_t>(in, "dtype");
    if (dtype != sizeof(Real))
        throw CheckpointError("checkpoint stores " + std::to_string(int(dtype) * 8) +
                              "-bit values; this build uses " + std::to_string(sizeof(Real) * 8) +
                              "-bit");
    const CatsConfig cfg = cats_config_from_text(read_string(in, "config"));

    // Reference parameter set fixes the expected names and shapes.
    Rng rng(0);
    ModelParams params = ModelParams::init(cfg, rng);
    auto tensors = params.all();
    const auto n = read_pod<std::uint32_t>(in, "tensor count");
    if (n != tensors.size())
        throw CheckpointError("checkpoint has " + std::to_string(n) + " tensors, config implies " +
                              std::to_string(tensors.size()));
    for (Tensor& expect : tensors) {
        const std::string name = read_string(in, "tensor name");
        if (name != expect.name())
            throw CheckpointError("unexpected tensor '" + name + "', wanted '" + expect.name() + "'");
        const auto ndim = read_pod<std::uint32_t>(in, "tensor rank");
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<std::size_t>(read_pod<std::uint64_t>(in, "tensor dim"));
        if (shape != expect.shape())
            throw CheckpointError("tensor '" + name + "' has shape " + shape_str(shape) +
                                  ", expected " + shape_str(expect.shape()));
        in.read(reinterpret_cast<char*>(expect.data_mut().data()),
                static_cast<std::streamsize>(expect.size() * sizeof(Real)));
        if (!in) throw CheckpointError("checkpoint truncated in tensor '" + name + "'");
    }
    char extra;
    if (in.read(&extra, 1)) throw CheckpointError("trailing bytes after checkpoint payload");
    return {cfg, std::move(params)};
}

}  // namespace cats
