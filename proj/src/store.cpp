#include "peft_forge/store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unistd.h>

#include "peft_forge/error.hpp"

namespace peft_forge {

namespace fs = std::filesystem;

std::string_view checkpoint_kind_name(CheckpointKind k) {
    switch (k) {
        case CheckpointKind::base: return "base";
        case CheckpointKind::adapter: return "adapter";
        case CheckpointKind::head: return "head";
        case CheckpointKind::stack: return "stack";
    }
    return "?";
}

namespace {

constexpr std::size_t kPrefixBytes = 12;

CheckpointKind parse_kind(const std::string& s) {
    for (auto k : {CheckpointKind::base, CheckpointKind::adapter, CheckpointKind::head, CheckpointKind::stack}) {
        if (checkpoint_kind_name(k) == s) return k;
    }
    throw DataError("checkpoint: unknown kind '" + s + "'");
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

float get_f32(const char* p) { return std::bit_cast<float>(get_u32(p)); }

template <typename T>
Json manifest_and_payload(const std::vector<NamedTensor<T>>& tensors, std::string& payload) {
    Json manifest = Json::array();
    for (const auto& [name, t] : tensors) {
        const std::size_t offset = payload.size();
        for (T v : t.data()) put_f32(payload, static_cast<float>(v));
        manifest.push_back(Json{{"name", name},
                                {"shape", t.shape()},
                                {"offset", offset},
                                {"bytes", payload.size() - offset}});
    }
    return manifest;
}

void write_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path() && !fs::exists(path.parent_path())) {
        throw DataError("checkpoint: directory " + path.parent_path().string() + " does not exist");
    }
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("checkpoint: cannot write " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw DataError("checkpoint: write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw DataError("checkpoint: cannot rename into " + path.string());
    }
}

/// Assembles and writes a container; `header` gains the manifest.
template <typename T>
void write_checkpoint(const fs::path& path, Json header, const std::vector<NamedTensor<T>>& tensors) {
    std::string payload;
    header["tensors"] = manifest_and_payload(tensors, payload);
    header["payload_bytes"] = payload.size();
    const std::string text = header.dump();
    if (text.size() > 0xFFFFFFFFull) throw DataError("checkpoint: header too large");
    std::string bytes(kCheckpointMagic, kCheckpointMagic + 4);
    put_u32(bytes, kCheckpointVersion);
    put_u32(bytes, static_cast<std::uint32_t>(text.size()));
    bytes += text;
    bytes += payload;
    write_atomic(path, bytes);
}

struct RawCheckpoint {
    CheckpointInfo info;
    std::string bytes;

    const char* payload() const { return bytes.data() + kPrefixBytes + info.header_bytes; }
};

std::uint64_t json_count(const Json& j, const char* what) {
    if (!j.is_number_integer() || j.get<long long>() < 0) {
        throw DataError(std::string("checkpoint: bad ") + what);
    }
    return j.get<std::uint64_t>();
}

RawCheckpoint read_checkpoint(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open " + path.string());
    RawCheckpoint raw;
    raw.bytes.assign(std::istreambuf_iterator<char>(f), {});
    const std::string where = "checkpoint " + path.string() + ": ";
    const auto& b = raw.bytes;
    if (b.size() < kPrefixBytes) throw DataError(where + "truncated before the header");
    if (std::memcmp(b.data(), kCheckpointMagic, 4) != 0) throw DataError(where + "bad magic");
    auto& info = raw.info;
    info.version = get_u32(b.data() + 4);
    if (info.version != kCheckpointVersion) {
        throw DataError(where + "unsupported version " + std::to_string(info.version));
    }
    info.header_bytes = get_u32(b.data() + 8);
    if (b.size() - kPrefixBytes < info.header_bytes) throw DataError(where + "truncated header");
    try {
        info.header = Json::parse(b.begin() + kPrefixBytes,
                                  b.begin() + static_cast<std::ptrdiff_t>(kPrefixBytes + info.header_bytes));
    } catch (const Json::exception& e) {
        throw DataError(where + "malformed header: " + e.what());
    }
    const Json& h = info.header;
    if (!h.is_object() || !h.contains("kind") || !h["kind"].is_string() || !h.contains("tensors") ||
        !h["tensors"].is_array() || !h.contains("payload_bytes") || !h.contains("fingerprint")) {
        throw DataError(where + "incomplete header");
    }
    info.kind = parse_kind(h["kind"].get<std::string>());
    info.payload_bytes = json_count(h["payload_bytes"], "payload_bytes");
    info.file_bytes = b.size();
    const std::uint64_t available = b.size() - kPrefixBytes - info.header_bytes;
    if (available < info.payload_bytes) throw DataError(where + "truncated payload");
    if (available > info.payload_bytes) throw DataError(where + "trailing bytes after the payload");

    std::uint64_t expect_offset = 0;
    for (const auto& t : h["tensors"]) {
        if (!t.is_object() || !t.contains("name") || !t["name"].is_string() || !t.contains("shape") ||
            !t["shape"].is_array() || !t.contains("offset") || !t.contains("bytes")) {
            throw DataError(where + "bad manifest entry");
        }
        std::uint64_t numel = 1;
        for (const auto& d : t["shape"]) numel *= json_count(d, "shape");
        if (json_count(t["offset"], "offset") != expect_offset || json_count(t["bytes"], "bytes") != numel * 4) {
            throw DataError(where + "manifest disagrees with payload at " + t["name"].dump());
        }
        expect_offset += numel * 4;
        info.parameter_count += numel;
    }
    if (expect_offset != info.payload_bytes) throw DataError(where + "manifest does not cover the payload");
    return raw;
}

const Json& require(const Json& header, const char* key) {
    const auto it = header.find(key);
    if (it == header.end()) throw DataError(std::string("checkpoint: header lacks \"") + key + "\"");
    return *it;
}

RawCheckpoint read_kind(const fs::path& path, CheckpointKind kind) {
    auto raw = read_checkpoint(path);
    if (raw.info.kind != kind) {
        throw DataError("checkpoint " + path.string() + ": holds a " +
                        std::string(checkpoint_kind_name(raw.info.kind)) + ", expected a " +
                        std::string(checkpoint_kind_name(kind)));
    }
    return raw;
}

void check_fingerprint(const RawCheckpoint& raw, const ModelConfig& base) {
    const std::string want = fingerprint_hex(config_fingerprint(base));
    const std::string got = raw.info.header["fingerprint"].is_string()
                                ? raw.info.header["fingerprint"].get<std::string>()
                                : std::string("?");
    if (got != want) {
        throw DataError("fingerprint mismatch: file was built for base " + got + ", attaching to base " + want);
    }
}

template <typename T>
std::vector<NamedTensor<T>> decode_tensors(const RawCheckpoint& raw) {
    std::vector<NamedTensor<T>> out;
    const char* payload = raw.payload();
    for (const auto& t : raw.info.header["tensors"]) {
        Shape shape;
        for (const auto& d : t["shape"]) shape.push_back(d.get<std::size_t>());
        const std::size_t offset = t["offset"].get<std::size_t>();
        const std::size_t n = t["bytes"].get<std::size_t>() / 4;
        std::vector<T> data(n);
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(get_f32(payload + offset + 4 * i));
        out.push_back({t["name"].get<std::string>(), BasicTensor<T>::from_data(shape, std::move(data))});
    }
    return out;
}

Json base_header(CheckpointKind kind, const ModelConfig& config) {
    return Json{{"kind", std::string(checkpoint_kind_name(kind))},
                {"fingerprint", fingerprint_hex(config_fingerprint(config))},
                {"model", to_json(config)}};
}

/// Tensors whose names start with `prefix`, with the prefix removed.
template <typename T>
std::vector<NamedTensor<T>> take_prefixed(const std::vector<NamedTensor<T>>& all, const std::string& prefix) {
    std::vector<NamedTensor<T>> out;
    for (const auto& nt : all) {
        if (nt.name.rfind(prefix, 0) == 0) out.push_back({nt.name.substr(prefix.size()), nt.tensor});
    }
    return out;
}

template <typename T>
AnyAdapter<T> rebuild_adapter(const Json& config, const BaseModel<T>& base, std::vector<NamedTensor<T>> tensors) {
    // Text-initialised prompts need some ids to build; the values are
    // overwritten by the stored tensors.
    const int placeholder[] = {Vocab::kUnk};
    auto adapter = make_adapter<T>(adapter_config_from_json(config), base, placeholder, 0);
    load_parameters(adapter, std::move(tensors));
    return adapter;
}

template <typename T>
ClassifierHead<T> rebuild_head(const Json& task_json, const ModelConfig& config,
                               std::vector<NamedTensor<T>> tensors) {
    const TaskSpec task = task_from_json(task_json);
    if (tensors.size() != 2 || tensors[0].name != "weight" || tensors[1].name != "bias") {
        throw DataError("checkpoint: head tensors must be weight and bias");
    }
    const Shape w{config.d_model, task.n_outputs()};
    const Shape bias{task.n_outputs()};
    if (tensors[0].tensor.shape() != w || tensors[1].tensor.shape() != bias) {
        throw DataError("checkpoint: head shapes do not match the task");
    }
    return ClassifierHead<T>{task, tensors[0].tensor, tensors[1].tensor};
}

}  // namespace

CheckpointInfo inspect_checkpoint(const fs::path& path) { return read_checkpoint(path).info; }

template <typename T>
void save_base(const BaseModel<T>& model, const fs::path& path, const Vocab* vocab) {
    Json header = base_header(CheckpointKind::base, model.config);
    if (vocab) header["vocab"] = vocab->tokens();
    write_checkpoint(path, std::move(header), model.named_parameters());
}

template <typename T>
LoadedBase<T> load_base(const fs::path& path) {
    const auto raw = read_kind(path, CheckpointKind::base);
    const Json& h = raw.info.header;
    const ModelConfig config = model_config_from_json(require(h, "model"));
    check_fingerprint(raw, config);
    LoadedBase<T> out{BaseModel<T>::from_named(config, decode_tensors<T>(raw)), std::nullopt};
    if (h.contains("vocab")) {
        if (!h["vocab"].is_array()) throw DataError("checkpoint: vocab must be a list of strings");
        std::vector<std::string> tokens;
        for (const auto& t : h["vocab"]) {
            if (!t.is_string()) throw DataError("checkpoint: vocab must be a list of strings");
            tokens.push_back(t.get<std::string>());
        }
        out.vocab = Vocab(std::move(tokens));
    }
    return out;
}

template <typename T>
void save_adapter(const AnyAdapter<T>& adapter, const fs::path& path) {
    Json header = base_header(CheckpointKind::adapter, model_config_of(adapter));
    header["adapter"] = to_json(config_of(adapter));
    write_checkpoint(path, std::move(header), named_parameters(adapter));
}

template <typename T>
AnyAdapter<T> load_adapter(const fs::path& path, const BaseModel<T>& base) {
    const auto raw = read_kind(path, CheckpointKind::adapter);
    check_fingerprint(raw, base.config);
    return rebuild_adapter<T>(require(raw.info.header, "adapter"), base, decode_tensors<T>(raw));
}

template <typename T>
void save_head(const ClassifierHead<T>& head, const ModelConfig& base_config, const fs::path& path) {
    Json header = base_header(CheckpointKind::head, base_config);
    header["task"] = to_json(head.task);
    write_checkpoint(path, std::move(header), head.named_parameters());
}

template <typename T>
ClassifierHead<T> load_head(const fs::path& path, const BaseModel<T>& base) {
    const auto raw = read_kind(path, CheckpointKind::head);
    check_fingerprint(raw, base.config);
    auto head = rebuild_head<T>(require(raw.info.header, "task"), base.config, decode_tensors<T>(raw));
    head.weight.set_requires_grad(true);
    head.bias.set_requires_grad(true);
    return head;
}

template <typename T>
void save_stack(const AdapterStack<T>& stack, const fs::path& path) {
    Json header = base_header(CheckpointKind::stack, stack.base.config);
    header["variant"] = stack.variant ? Json(std::string(variant_name(*stack.variant))) : Json(nullptr);
    auto slot = [](const AttachedAdapter<T>& a) {
        return Json{{"adapter", to_json(config_of(a.adapter))}, {"frozen", a.frozen}};
    };
    if (stack.domain) header["domain"] = slot(*stack.domain);
    if (stack.downstream) header["downstream"] = slot(*stack.downstream);
    if (stack.head) header["head"] = to_json(stack.head->task);
    write_checkpoint(path, std::move(header), stack.named_parameters());
}

template <typename T>
AdapterStack<T> load_stack(const fs::path& path, const BaseModel<T>& base) {
    const auto raw = read_kind(path, CheckpointKind::stack);
    check_fingerprint(raw, base.config);
    const Json& h = raw.info.header;
    const auto tensors = decode_tensors<T>(raw);

    AdapterStack<T> stack;
    stack.base = base;
    if (h.contains("variant") && !h["variant"].is_null()) {
        if (!h["variant"].is_string()) throw DataError("checkpoint: variant must be a string");
        try {
            stack.variant = parse_variant(h["variant"].get<std::string>());
        } catch (const UsageError& e) {
            throw DataError(e.what());
        }
    }
    std::size_t used = 0;
    auto slot = [&](const char* key) -> std::optional<AttachedAdapter<T>> {
        if (!h.contains(key)) return std::nullopt;
        const Json& s = h[key];
        if (!s.is_object() || !s.contains("adapter") || !s.contains("frozen") || !s["frozen"].is_boolean()) {
            throw DataError(std::string("checkpoint: bad ") + key + " entry");
        }
        auto part = take_prefixed(tensors, std::string(key) + ".");
        used += part.size();
        AttachedAdapter<T> a{rebuild_adapter<T>(s["adapter"], base, std::move(part)), s["frozen"].get<bool>()};
        set_trainable(a.adapter, !a.frozen);
        return a;
    };
    stack.domain = slot("domain");
    stack.downstream = slot("downstream");
    if (h.contains("head")) {
        auto part = take_prefixed(tensors, "head.");
        used += part.size();
        stack.head = rebuild_head<T>(h["head"], base.config, std::move(part));
        stack.head->weight.set_requires_grad(true);
        stack.head->bias.set_requires_grad(true);
    }
    if (used != tensors.size()) throw DataError("checkpoint: stack holds tensors no slot claims");
    return stack;
}

#define PEFT_FORGE_INSTANTIATE(T)                                                                   \
    template void save_base(const BaseModel<T>&, const fs::path&, const Vocab*);                    \
    template LoadedBase<T> load_base(const fs::path&);                                              \
    template void save_adapter(const AnyAdapter<T>&, const fs::path&);                              \
    template AnyAdapter<T> load_adapter(const fs::path&, const BaseModel<T>&);                      \
    template void save_head(const ClassifierHead<T>&, const ModelConfig&, const fs::path&);         \
    template ClassifierHead<T> load_head(const fs::path&, const BaseModel<T>&);                     \
    template void save_stack(const AdapterStack<T>&, const fs::path&);                              \
    template AdapterStack<T> load_stack(const fs::path&, const BaseModel<T>&);

PEFT_FORGE_INSTANTIATE(float)
PEFT_FORGE_INSTANTIATE(double)

#undef PEFT_FORGE_INSTANTIATE

}  // namespace peft_forge
