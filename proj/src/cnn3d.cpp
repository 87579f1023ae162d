#include "nodulefuse/cnn3d.hpp"

#include <cstring>

namespace nf {

namespace {

constexpr char kMagic[4] = {'N', 'F', 'C', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

const char* kind_name(LayerSpec::Kind kind) {
    switch (kind) {
        case LayerSpec::Kind::Conv3D: return "conv3d";
        case LayerSpec::Kind::MaxPool3D: return "maxpool3d";
        case LayerSpec::Kind::Flatten: return "flatten";
        case LayerSpec::Kind::Dense: return "dense";
    }
    throw std::invalid_argument("unknown layer kind");
}

LayerSpec::Kind kind_from_name(const std::string& name) {
    if (name == "conv3d") return LayerSpec::Kind::Conv3D;
    if (name == "maxpool3d") return LayerSpec::Kind::MaxPool3D;
    if (name == "flatten") return LayerSpec::Kind::Flatten;
    if (name == "dense") return LayerSpec::Kind::Dense;
    throw DataError("unknown layer kind: " + name);
}

const char* activation_name(Activation act) {
    switch (act) {
        case Activation::ReLU: return "relu";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Linear: return "linear";
    }
    throw std::invalid_argument("unknown activation");
}

Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::ReLU;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "linear") return Activation::Linear;
    throw DataError("unknown activation: " + name);
}

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void append_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void require(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError("truncated checkpoint");
    }
    std::uint32_t u32() {
        require(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)]))
                 << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(std::size_t n) {
        require(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace

nlohmann::json architecture_to_json(const CnnArchitecture& arch) {
    nlohmann::json j;
    j["input_dims"] = arch.input_dims;
    auto& layers = j["layers"] = nlohmann::json::array();
    for (const LayerSpec& spec : arch.layers) {
        nlohmann::json l;
        l["kind"] = kind_name(spec.kind);
        if (spec.kind == LayerSpec::Kind::Conv3D || spec.kind == LayerSpec::Kind::Dense) {
            l["units"] = spec.units;
            l["activation"] = activation_name(spec.activation);
            l["l2"] = spec.l2;
        }
        layers.push_back(std::move(l));
    }
    return j;
}

CnnArchitecture architecture_from_json(const nlohmann::json& j) {
    CnnArchitecture arch;
    const auto& dims = j.at("input_dims");
    if (!dims.is_array() || dims.size() != 3) throw DataError("input_dims must have 3 entries");
    for (std::size_t a = 0; a < 3; ++a) arch.input_dims[a] = dims[a].get<int>();
    for (const auto& l : j.at("layers")) {
        LayerSpec spec;
        spec.kind = kind_from_name(l.at("kind").get<std::string>());
        if (spec.kind == LayerSpec::Kind::Conv3D || spec.kind == LayerSpec::Kind::Dense) {
            spec.units = l.at("units").get<int>();
            spec.activation = activation_from_name(l.at("activation").get<std::string>());
            spec.l2 = l.value("l2", 0.0);
        }
        arch.layers.push_back(spec);
    }
    return arch;
}

void save_checkpoint(const Network<float>& net, const std::filesystem::path& path) {
    std::string out;
    out.append(kMagic, 4);
    append_u32(out, kCheckpointVersion);
    const std::string header = architecture_to_json(net.architecture()).dump();
    append_u32(out, static_cast<std::uint32_t>(header.size()));
    out.append(header);

    for (int li = 0; li < net.layer_count(); ++li) {
        const LayerSpec& spec = net.layer_spec(li);
        const auto& W = net.layer_weights(li);
        const auto& b = net.layer_bias(li);
        if (spec.kind == LayerSpec::Kind::Conv3D) {
            const int cout = static_cast<int>(W.rows());
            const int cin = static_cast<int>(W.cols()) / 27;
            for (int co = 0; co < cout; ++co)
                for (int ci = 0; ci < cin; ++ci)
                    for (int kz = 0; kz < 3; ++kz)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx)
                                append_f32(out, W(co, ci * 27 + (kz * 3 + ky) * 3 + kx));
            for (int co = 0; co < cout; ++co) append_f32(out, b[co]);
        } else if (spec.kind == LayerSpec::Kind::Dense) {
            for (Eigen::Index o = 0; o < W.rows(); ++o)
                for (Eigen::Index i = 0; i < W.cols(); ++i) append_f32(out, W(o, i));
            for (Eigen::Index o = 0; o < b.size(); ++o) append_f32(out, b[o]);
        }
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw DataError("cannot open checkpoint for writing: " + path.string());
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw DataError("failed writing checkpoint: " + path.string());
}

Network<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open checkpoint: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    Reader r{buf};
    const std::string magic = r.bytes(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        throw UnsupportedSchemaError("bad checkpoint magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw UnsupportedSchemaError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t header_len = r.u32();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.bytes(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header parse failure: ") + e.what());
    }

    Network<float> net(architecture_from_json(header), 0);
    for (int li = 0; li < net.layer_count(); ++li) {
        const LayerSpec& spec = net.layer_spec(li);
        auto& W = net.layer_weights(li);
        auto& b = net.layer_bias(li);
        if (spec.kind == LayerSpec::Kind::Conv3D) {
            const int cout = static_cast<int>(W.rows());
            const int cin = static_cast<int>(W.cols()) / 27;
            for (int co = 0; co < cout; ++co)
                for (int ci = 0; ci < cin; ++ci)
                    for (int kz = 0; kz < 3; ++kz)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx)
                                W(co, ci * 27 + (kz * 3 + ky) * 3 + kx) = r.f32();
            for (int co = 0; co < cout; ++co) b[co] = r.f32();
        } else if (spec.kind == LayerSpec::Kind::Dense) {
            for (Eigen::Index o = 0; o < W.rows(); ++o)
                for (Eigen::Index i = 0; i < W.cols(); ++i) W(o, i) = r.f32();
            for (Eigen::Index o = 0; o < b.size(); ++o) b[o] = r.f32();
        }
    }
    if (r.pos != buf.size()) throw DataError("trailing bytes in checkpoint");
    return net;
}

} // namespace nf
