#include "cdx/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cdx {

Tensor ParamStore::add(const std::string& name, Shape shape, Init init, Rng& rng, std::size_t fan_in) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Tensor t = Tensor::zeros(std::move(shape), true);
    auto v = t.data_mut();
    switch (init) {
        case Init::Zeros: break;
        case Init::Ones:
            for (auto& x : v) x = 1.0;
            break;
        case Init::KaimingUniform:
        case Init::FanInUniform: {
            if (fan_in == 0) throw std::invalid_argument("uniform init needs fan_in for " + name);
            const double num = init == Init::KaimingUniform ? 6.0 : 1.0;
            const double bound = std::sqrt(num / static_cast<double>(fan_in));
            for (auto& x : v) x = rng.uniform(-bound, bound);
            break;
        }
    }
    index_.emplace(name, params_.size());
    params_.push_back({name, t});
    return t;
}

Tensor ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].value;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

namespace {

constexpr char kMagic[8] = {'C', 'D', 'X', 'L', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw CheckpointError("checkpoint truncated reading " + what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, 1);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(store.params().size()));
    for (const auto& p : store.params()) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) put<std::uint64_t>(os, d);
        for (double v : p.value.data()) put<double>(os, v);
    }
    if (!os) throw CheckpointError("failed writing checkpoint: " + path.string());
}

void load_checkpoint(ParamStore& store, const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw CheckpointError("not a checkpoint file: " + path.string());
    if (auto ver = get<std::uint32_t>(is, "version"); ver != 1)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(ver));
    const auto count = get<std::uint32_t>(is, "entry count");
    std::unordered_map<std::string, std::pair<Shape, std::vector<double>>> entries;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto len = get<std::uint32_t>(is, "name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw CheckpointError("checkpoint truncated reading a name");
        const auto rank = get<std::uint32_t>(is, name);
        if (rank == 0 || rank > 4) throw CheckpointError("bad rank for parameter " + name);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is, name));
        std::vector<double> values(numel_of(shape));
        for (auto& v : values) v = get<double>(is, name);
        entries.emplace(std::move(name), std::make_pair(std::move(shape), std::move(values)));
    }
    for (const auto& p : store.params()) {
        auto it = entries.find(p.name);
        if (it == entries.end()) throw CheckpointError("checkpoint is missing parameter " + p.name);
        if (it->second.first != p.value.shape())
            throw CheckpointError("checkpoint shape mismatch for parameter " + p.name + ": file " +
                                     shape_str(it->second.first) + ", model " + shape_str(p.value.shape()));
    }
    if (entries.size() != store.params().size())
        for (const auto& [name, _] : entries)
            if (!store.contains(name)) throw CheckpointError("checkpoint has unknown parameter " + name);
    for (auto p : store.params()) {
        const auto& vals = entries.at(p.name).second;
        std::copy(vals.begin(), vals.end(), p.value.data_mut().begin());
    }
}

}  // namespace cdx
