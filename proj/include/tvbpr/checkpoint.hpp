#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>

#include "common.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "model.hpp"
#include "segmentation.hpp"

namespace tvbpr {

inline constexpr std::array<char, 6> kCheckpointMagic{'T', 'V', 'B', 'P', 'R', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to score held-out data again: parameters, the epoch
/// segmentation, the dense ID maps and the taxonomy. Features are supplied by
/// the caller on load.
struct Checkpoint {
    Model model;
    EpochSegmentation segmentation;
    IdMap users;
    IdMap items;
    std::shared_ptr<const Taxonomy> taxonomy;
};

namespace detail {

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}

    template <class T>
    void pod(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        out_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void u64(std::uint64_t v) { pod(v); }
    void str(const std::string& s) {
        u64(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    template <class T>
    void array(std::span<const T> v) {
        u64(v.size());
        out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
    }

private:
    std::ostream& out_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::istream& in) : in_(in) {}

    void bytes(char* dst, std::size_t n) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("truncated checkpoint");
    }
    template <class T>
    T pod() {
        T v;
        bytes(reinterpret_cast<char*>(&v), sizeof v);
        return v;
    }
    std::uint64_t u64() { return pod<std::uint64_t>(); }
    // Guards allocations against corrupt length fields.
    std::uint64_t length(std::uint64_t limit = std::uint64_t{1} << 36) {
        const auto n = u64();
        if (n > limit) throw FormatError("corrupt checkpoint length field");
        return n;
    }
    std::string str() {
        std::string s(length(1 << 20), '\0');
        bytes(s.data(), s.size());
        return s;
    }
    template <class T>
    void array_into(std::span<T> dst) {
        if (length() != dst.size()) throw FormatError("checkpoint array size does not match the declared shape");
        bytes(reinterpret_cast<char*>(dst.data()), dst.size_bytes());
    }
    template <class T>
    std::vector<T> array() {
        std::vector<T> v(length());
        bytes(reinterpret_cast<char*>(v.data()), v.size() * sizeof(T));
        return v;
    }
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    std::istream& in_;
};

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, std::ostream& out) {
    detail::BinaryWriter w(out);
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.pod(kCheckpointVersion);
    w.pod(static_cast<std::uint8_t>(sizeof(Model::value_type)));

    const auto kv = to_key_values(ck.model.config);
    w.u64(kv.size());
    for (const auto& [k, v] : kv) {
        w.str(k);
        w.str(v);
    }
    w.u64(ck.model.shape.num_users);
    w.u64(ck.model.shape.num_items);
    w.u64(ck.model.shape.num_categories);

    for (const auto* ids : {&ck.users, &ck.items}) {
        w.u64(ids->size());
        for (const auto& n : ids->names()) w.str(n);
    }
    w.pod(static_cast<std::uint8_t>(ck.taxonomy != nullptr));
    if (ck.taxonomy) {
        w.u64(ck.taxonomy->category_names.size());
        for (const auto& n : ck.taxonomy->category_names) w.str(n);
        w.array(std::span<const std::uint32_t>(ck.taxonomy->category_of));
    }

    const auto& seg = ck.segmentation;
    w.pod(seg.bins.t_min());
    w.pod(seg.bins.t_max());
    w.u64(seg.bins.count());
    w.u64(seg.num_epochs);
    w.array(std::span<const std::uint32_t>(seg.epoch_of_bin));

    w.u64(ck.model.epochs.size());
    w.array(std::span<const double>(ck.model.drift.mean_time));
    ck.model.for_each_family([&](std::string_view name, std::size_t epoch, std::span<const float> values) {
        w.str(std::string(name));
        w.u64(epoch);
        w.array(values);
    });
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    save_checkpoint(ck, out);
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(std::istream& in, std::shared_ptr<const FeatureStore> features = nullptr) {
    detail::BinaryReader r(in);
    std::array<char, 6> magic{};
    r.bytes(magic.data(), magic.size());
    if (magic != kCheckpointMagic) throw FormatError("not a checkpoint (bad magic)");
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    if (r.pod<std::uint8_t>() != sizeof(Model::value_type)) throw FormatError("checkpoint scalar width mismatch");

    Checkpoint ck;
    auto& m = ck.model;
    const auto nkv = r.length(1024);
    for (std::uint64_t k = 0; k < nkv; ++k) {
        const auto key = r.str();
        const auto value = r.str();
        apply_key_value(m.config, key, value);
    }
    m.shape.num_users = r.u64();
    m.shape.num_items = r.u64();
    m.shape.num_categories = r.u64();

    for (auto* ids : {&ck.users, &ck.items}) {
        const auto n = r.length();
        for (std::uint64_t k = 0; k < n; ++k) ids->intern(r.str());
        if (ids->size() != n) throw FormatError("duplicate IDs in checkpoint");
    }
    if (r.pod<std::uint8_t>()) {
        auto tax = std::make_shared<Taxonomy>();
        tax->category_names.clear();
        const auto n = r.length();
        for (std::uint64_t k = 0; k < n; ++k) tax->category_names.push_back(r.str());
        tax->category_of = r.array<std::uint32_t>();
        ck.taxonomy = std::move(tax);
    }

    const auto t_min = r.pod<Timestamp>();
    const auto t_max = r.pod<Timestamp>();
    const auto bins = r.u64();
    ck.segmentation.bins = TimeBins(t_min, t_max, bins);
    ck.segmentation.num_epochs = r.u64();
    ck.segmentation.epoch_of_bin = r.array<std::uint32_t>();
    if (!m.config.variant.is_pop() && !ck.segmentation.is_valid()) throw FormatError("invalid segmentation in checkpoint");

    const auto num_epochs = r.length(1 << 20);
    auto mean_time = r.array<double>();
    if (!m.config.variant.is_pop()) m.allocate();
    if (m.epochs.size() != num_epochs) throw FormatError("checkpoint epoch count does not match its config");
    m.drift.mean_time = std::move(mean_time);
    m.for_each_family([&](std::string_view name, std::size_t epoch, std::span<float> values) {
        if (r.str() != name || r.u64() != epoch) throw FormatError("checkpoint parameter families out of order");
        r.array_into(values);
    });
    if (!r.at_end()) throw FormatError("trailing bytes after checkpoint");
    m.attach(std::move(features), ck.taxonomy);
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path, std::shared_ptr<const FeatureStore> features = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path);
    return load_checkpoint(in, std::move(features));
}

/// Human-readable dump of E rows, w(ep) and b(ep).
inline void export_parameters_text(const Model& m, std::ostream& out) {
    auto row = [&](std::string_view label, auto values) {
        out << label;
        for (auto x : values) out << ' ' << detail::format_number(x);
        out << '\n';
    };
    for (std::size_t k = 0; k < m.global.embedding.rows(); ++k)
        row("E[" + std::to_string(k) + "]", m.global.embedding.row(k));
    for (std::size_t e = 0; e < m.epochs.size(); ++e) {
        if (!m.epochs[e].weighting.empty()) row("w[" + std::to_string(e) + "]", std::span<const float>(m.epochs[e].weighting));
        if (!m.epochs[e].bias_weighting.empty())
            row("b[" + std::to_string(e) + "]", std::span<const float>(m.epochs[e].bias_weighting));
    }
}

}  // namespace tvbpr
