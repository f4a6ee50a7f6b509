#include "fewtab/weights_io.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace fewtab {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'W', 'B'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, const std::vector<float>& v) {
    static_assert(sizeof(float) == 4);
    const size_t pos = out.size();
    out.resize(pos + v.size() * 4);
    std::memcpy(out.data() + pos, v.data(), v.size() * 4);
}

struct Cursor {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw FormatError("weights: truncated container");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    void f32(std::vector<float>& v) {
        need(v.size() * 4);
        std::memcpy(v.data(), buf.data() + pos, v.size() * 4);
        pos += v.size() * 4;
    }
};

std::vector<std::pair<std::string, const std::vector<float>*>> tensor_table(
    const Backbone<float>& net) {
    std::vector<std::pair<std::string, const std::vector<float>*>> out;
    const auto& blocks = net.blocks();
    for (size_t b = 0; b < blocks.size(); ++b) {
        const std::string p = "block" + std::to_string(b + 1);
        out.emplace_back(p + ".conv.kernel", &blocks[b].kernel);
        out.emplace_back(p + ".conv.bias", &blocks[b].bias);
        out.emplace_back(p + ".norm.scale", &blocks[b].bn_scale);
        out.emplace_back(p + ".norm.shift", &blocks[b].bn_shift);
        out.emplace_back(p + ".norm.run_mean", &blocks[b].run_mean);
        out.emplace_back(p + ".norm.run_var", &blocks[b].run_var);
    }
    return out;
}

}  // namespace

std::string weights_manifest_json(const Backbone<float>& net, uint64_t content_hash) {
    nlohmann::ordered_json j;
    j["format"] = "fewtab-weights/1";
    j["arch"] = arch_name(net.spec().arch);
    j["channels"] = net.spec().channels;
    j["latent_mode"] = net.spec().latent_mode == LatentMode::Flatten ? "flatten" : "gap";
    j["in_channels"] = net.spec().in_channels;
    j["init_seed"] = net.seed();
    j["param_count"] = net.param_count();
    j["content_hash"] = to_hex(content_hash);
    // describe every tensor stored in the container, running stats included,
    // in container order
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    const auto& blocks = net.blocks();
    auto add = [&tensors](const std::string& name, std::vector<int> shape) {
        nlohmann::ordered_json t;
        t["name"] = name;
        t["shape"] = std::move(shape);
        tensors.push_back(std::move(t));
    };
    for (size_t b = 0; b < blocks.size(); ++b) {
        const std::string p = "block" + std::to_string(b + 1);
        add(p + ".conv.kernel", {blocks[b].out_ch, blocks[b].in_ch, 3, 3});
        add(p + ".conv.bias", {blocks[b].out_ch});
        add(p + ".norm.scale", {blocks[b].out_ch});
        add(p + ".norm.shift", {blocks[b].out_ch});
        add(p + ".norm.run_mean", {blocks[b].out_ch});
        add(p + ".norm.run_var", {blocks[b].out_ch});
    }
    j["tensors"] = std::move(tensors);
    return j.dump(2) + "\n";
}

void save_weights(const Backbone<float>& net, const std::filesystem::path& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<uint32_t>(block_count(net.spec().arch)));
    put_u32(buf, static_cast<uint32_t>(net.spec().channels));
    put_u32(buf, net.spec().latent_mode == LatentMode::Flatten ? 0u : 1u);
    put_u32(buf, static_cast<uint32_t>(net.spec().in_channels));
    put_u64(buf, net.seed());
    const auto table = tensor_table(net);
    put_u32(buf, static_cast<uint32_t>(table.size()));
    for (const auto& [name, tensor] : table) {
        put_u32(buf, static_cast<uint32_t>(name.size()));
        buf.append(name);
        put_u64(buf, tensor->size());
        put_f32(buf, *tensor);
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing " + path.string());
    out.close();

    std::filesystem::path manifest = path;
    manifest += ".json";
    std::ofstream mout(manifest);
    if (!mout) throw IoError("cannot open " + manifest.string() + " for writing");
    mout << weights_manifest_json(net, fnv1a64(buf));
    if (!mout) throw IoError("failed writing " + manifest.string());
}

Backbone<float> load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Cursor c{buf};
    c.need(4);
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError("weights: bad magic");
    c.pos = 4;
    const uint32_t version = c.u32();
    if (version != kVersion) {
        throw FormatError("weights: unsupported container version " + std::to_string(version));
    }
    const uint32_t nblocks = c.u32();
    BackboneSpec spec;
    switch (nblocks) {
        case 2: spec.arch = Arch::Conv2; break;
        case 3: spec.arch = Arch::Conv3; break;
        case 4: spec.arch = Arch::Conv4; break;
        default: throw FormatError("weights: unsupported block count " + std::to_string(nblocks));
    }
    spec.channels = static_cast<int>(c.u32());
    const uint32_t lm = c.u32();
    if (lm > 1) throw FormatError("weights: bad latent mode tag");
    spec.latent_mode = lm == 0 ? LatentMode::Flatten : LatentMode::GlobalAvgPool;
    spec.in_channels = static_cast<int>(c.u32());
    const uint64_t seed = c.u64();
    if (spec.channels < 1 || spec.channels > 4096 || spec.in_channels < 1 ||
        spec.in_channels > 4096) {
        throw FormatError("weights: implausible channel counts");
    }

    Backbone<float> net(spec, seed);
    auto& blocks = net.blocks();
    std::vector<std::pair<std::string, std::vector<float>*>> table;
    for (size_t b = 0; b < blocks.size(); ++b) {
        const std::string p = "block" + std::to_string(b + 1);
        table.emplace_back(p + ".conv.kernel", &blocks[b].kernel);
        table.emplace_back(p + ".conv.bias", &blocks[b].bias);
        table.emplace_back(p + ".norm.scale", &blocks[b].bn_scale);
        table.emplace_back(p + ".norm.shift", &blocks[b].bn_shift);
        table.emplace_back(p + ".norm.run_mean", &blocks[b].run_mean);
        table.emplace_back(p + ".norm.run_var", &blocks[b].run_var);
    }

    const uint32_t count = c.u32();
    if (count != table.size()) throw FormatError("weights: tensor count mismatch");
    for (auto& [name, tensor] : table) {
        const uint32_t name_len = c.u32();
        c.need(name_len);
        const std::string got(buf, c.pos, name_len);
        c.pos += name_len;
        if (got != name) throw FormatError("weights: expected tensor '" + name + "', found '" + got + "'");
        const uint64_t n = c.u64();
        if (n != tensor->size()) throw FormatError("weights: size mismatch for '" + name + "'");
        c.f32(*tensor);
    }
    if (c.pos != buf.size()) throw FormatError("weights: trailing bytes in container");
    return net;
}

}  // namespace fewtab
