#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "common.hpp"
#include "dataset.hpp"

namespace tvbpr {

struct SparseView {
    std::span<const std::uint32_t> index;
    std::span<const float> value;

    std::size_t nnz() const noexcept { return index.size(); }
};

/// Visits the union of two sparse supports in ascending index order as
/// fn(index, a_value, b_value), with 0 for the side that lacks the index.
template <class Fn>
void for_each_union(SparseView a, SparseView b, Fn&& fn) {
    std::size_t p = 0, q = 0;
    while (p < a.nnz() || q < b.nnz()) {
        if (q == b.nnz() || (p < a.nnz() && a.index[p] < b.index[q])) {
            fn(a.index[p], a.value[p], 0.0f);
            ++p;
        } else if (p == a.nnz() || b.index[q] < a.index[p]) {
            fn(b.index[q], 0.0f, b.value[q]);
            ++q;
        } else {
            fn(a.index[p], a.value[p], b.value[q]);
            ++p;
            ++q;
        }
    }
}

/// Per-item sparse non-negative feature vectors in compressed-row layout,
/// indexed by dense item index. Immutable once built.
class FeatureStore {
public:
    FeatureStore() = default;
    explicit FeatureStore(std::size_t dim) : dim_(dim), offsets_{0} {}

    // Items must be appended in dense index order.
    void append(std::span<const std::uint32_t> index, std::span<const float> value) {
        if (index.size() != value.size()) throw FormatError("index/value length mismatch");
        for (std::size_t k = 0; k < index.size(); ++k) {
            if (index[k] >= dim_)
                throw FormatError("feature index " + std::to_string(index[k]) + " >= dim " + std::to_string(dim_));
            if (k > 0 && index[k] <= index[k - 1]) throw FormatError("feature indices must be strictly increasing");
            if (!std::isfinite(value[k])) throw FormatError("non-finite feature value");
        }
        index_.insert(index_.end(), index.begin(), index.end());
        value_.insert(value_.end(), value.begin(), value.end());
        offsets_.push_back(index_.size());
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t num_items() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
    std::size_t total_nnz() const noexcept { return index_.size(); }

    double density() const {
        const double cells = static_cast<double>(num_items()) * static_cast<double>(dim_);
        return cells > 0 ? static_cast<double>(total_nnz()) / cells : 0.0;
    }

    SparseView operator[](ItemId i) const {
        if (i >= num_items()) throw std::out_of_range("no feature vector for item " + std::to_string(i));
        const auto b = offsets_[i], e = offsets_[i + 1];
        return {{index_.data() + b, e - b}, {value_.data() + b, e - b}};
    }

    std::vector<float> dense(ItemId i) const {
        std::vector<float> out(dim_, 0.0f);
        const auto v = (*this)[i];
        for (std::size_t k = 0; k < v.nnz(); ++k) out[v.index[k]] = v.value[k];
        return out;
    }

    /// Inner product of a dense F-vector with f_i, touching only nonzeros.
    template <class Row>
    double dot_embed(const Row& row, ItemId i) const {
        const auto v = (*this)[i];
        double acc = 0.0;
        for (std::size_t k = 0; k < v.nnz(); ++k) acc += static_cast<double>(row[v.index[k]]) * v.value[k];
        return acc;
    }

    bool operator==(const FeatureStore&) const = default;

private:
    std::size_t dim_ = 0;
    std::vector<std::size_t> offsets_;
    std::vector<std::uint32_t> index_;
    std::vector<float> value_;
};

/// Parses the `#dim F` header followed by `item_id idx:val ...` lines and
/// returns a store aligned with `items`. Vectors for unknown items are
/// skipped; items without a vector are reported together.
inline FeatureStore parse_features(std::istream& in, const IdMap& items) {
    std::string line;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto text = detail::trim(line);
        if (text.empty()) continue;
        if (text.rfind("#dim", 0) != 0) throw ParseError("feature file must start with '#dim F'", line_no);
        if (!detail::parse_number(detail::trim(text.substr(4)), dim) || dim == 0)
            throw ParseError("bad feature dimension", line_no);
        break;
    }
    if (dim == 0) throw ParseError("missing '#dim F' header");

    std::vector<std::vector<std::uint32_t>> idx(items.size());
    std::vector<std::vector<float>> val(items.size());
    std::vector<bool> seen(items.size(), false);
    while (std::getline(in, line)) {
        ++line_no;
        const auto text = detail::trim(line);
        if (text.empty() || text.front() == '#') continue;
        auto tokens = detail::split(text, ' ');
        const auto item = items.find(tokens[0]);
        if (!item) continue;
        if (seen[*item]) throw ParseError("duplicate feature vector for item " + std::string(tokens[0]), line_no);
        seen[*item] = true;
        for (std::size_t k = 1; k < tokens.size(); ++k) {
            if (tokens[k].empty()) continue;
            const auto colon = tokens[k].find(':');
            std::uint32_t j;
            float x;
            if (colon == std::string_view::npos || !detail::parse_number(tokens[k].substr(0, colon), j) ||
                !detail::parse_number(tokens[k].substr(colon + 1), x))
                throw ParseError("bad feature entry '" + std::string(tokens[k]) + "'", line_no);
            if (j >= dim) throw ParseError("feature index " + std::to_string(j) + " >= dim " + std::to_string(dim), line_no);
            if (!idx[*item].empty() && j <= idx[*item].back())
                throw ParseError("feature indices must be strictly increasing", line_no);
            if (!std::isfinite(x)) throw ParseError("non-finite feature value", line_no);
            idx[*item].push_back(j);
            val[*item].push_back(x);
        }
    }

    std::vector<std::string> missing;
    for (std::size_t i = 0; i < items.size(); ++i)
        if (!seen[i]) missing.push_back(items.name(static_cast<ItemId>(i)));
    if (!missing.empty()) {
        std::string msg = std::to_string(missing.size()) + " item(s) lack feature vectors:";
        for (std::size_t k = 0; k < std::min<std::size_t>(missing.size(), 20); ++k) msg += " " + missing[k];
        if (missing.size() > 20) msg += " ...";
        throw ValidationError(msg);
    }

    FeatureStore store(dim);
    for (std::size_t i = 0; i < items.size(); ++i) store.append(idx[i], val[i]);
    return store;
}

inline FeatureStore load_features(const std::string& path, const IdMap& items) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open feature file: " + path);
    return parse_features(in, items);
}

inline void write_features(const FeatureStore& store, const IdMap& items, std::ostream& out) {
    out << "#dim " << store.dim() << '\n';
    for (std::size_t i = 0; i < store.num_items(); ++i) {
        out << items.name(static_cast<ItemId>(i));
        const auto v = store[static_cast<ItemId>(i)];
        for (std::size_t k = 0; k < v.nnz(); ++k) out << ' ' << v.index[k] << ':' << detail::format_number(v.value[k]);
        out << '\n';
    }
}

}  // namespace tvbpr
