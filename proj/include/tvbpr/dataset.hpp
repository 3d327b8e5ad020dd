#pragma once

#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"

namespace tvbpr {

struct Interaction {
    UserId user;
    ItemId item;
    Timestamp timestamp;

    bool operator==(const Interaction&) const = default;
};

/// Bidirectional map between opaque raw IDs and dense indices assigned in
/// first-appearance order.
class IdMap {
public:
    std::uint32_t intern(std::string_view raw) {
        auto it = index_.find(std::string(raw));
        if (it != index_.end()) return it->second;
        const auto id = static_cast<std::uint32_t>(names_.size());
        names_.emplace_back(raw);
        index_.emplace(names_.back(), id);
        return id;
    }

    std::optional<std::uint32_t> find(std::string_view raw) const {
        auto it = index_.find(std::string(raw));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& name(std::uint32_t id) const { return names_.at(id); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    std::size_t size() const noexcept { return names_.size(); }

    bool operator==(const IdMap& other) const { return names_ == other.names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

struct InteractionLog {
    std::vector<Interaction> interactions;
    IdMap users;
    IdMap items;
    Timestamp t_min = 0;
    Timestamp t_max = 0;

    std::size_t num_users() const noexcept { return users.size(); }
    std::size_t num_items() const noexcept { return items.size(); }

    bool operator==(const InteractionLog&) const = default;
};

struct ItemTime {
    ItemId item;
    Timestamp t;

    bool operator==(const ItemTime&) const = default;
};

/// Per-user leave-one-out split: P_u for training, singleton V_u and T_u.
struct Split {
    std::size_t num_users = 0;
    std::size_t num_items = 0;
    Timestamp t_min = 0;
    Timestamp t_max = 0;
    std::vector<std::vector<ItemTime>> train;
    std::vector<ItemTime> validation;
    std::vector<ItemTime> test;
    // Sorted item lists for membership queries.
    std::vector<std::vector<ItemId>> train_items;
    std::vector<std::vector<ItemId>> observed_items;  // P_u ∪ V_u ∪ T_u

    bool in_train(UserId u, ItemId i) const {
        const auto& v = train_items[u];
        return std::binary_search(v.begin(), v.end(), i);
    }
    bool observed(UserId u, ItemId i) const {
        const auto& v = observed_items[u];
        return std::binary_search(v.begin(), v.end(), i);
    }

    std::size_t num_train_positives() const {
        std::size_t n = 0;
        for (const auto& p : train) n += p.size();
        return n;
    }
};

struct Taxonomy {
    static constexpr std::uint32_t kUnknown = 0;

    std::vector<std::uint32_t> category_of;  // item -> category, 0 = unknown
    std::vector<std::string> category_names{"<unknown>"};

    std::size_t num_categories() const noexcept { return category_names.size(); }

    bool operator==(const Taxonomy&) const = default;
};

inline InteractionLog parse_interactions(std::istream& in, std::size_t min_actions) {
    struct RawEvent {
        std::string user;
        std::string item;
        Timestamp t;
    };
    std::vector<RawEvent> events;
    std::unordered_map<std::string, std::size_t> first_seen;  // "user\titem" -> event slot
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto text = detail::trim(line);
        if (text.empty() || text.front() == '#') continue;
        const auto fields = detail::split(text, '\t');
        if (fields.size() != 3 || fields[0].empty() || fields[1].empty())
            throw ParseError("expected user_id<TAB>item_id<TAB>timestamp", line_no);
        Timestamp t;
        if (!detail::parse_number(fields[2], t)) throw ParseError("bad timestamp '" + std::string(fields[2]) + "'", line_no);
        std::string key;
        key.reserve(fields[0].size() + fields[1].size() + 1);
        key.append(fields[0]).push_back('\t');
        key.append(fields[1]);
        auto [it, inserted] = first_seen.emplace(std::move(key), events.size());
        if (inserted) {
            events.push_back({std::string(fields[0]), std::string(fields[1]), t});
        } else {
            auto& kept = events[it->second];
            kept.t = std::min(kept.t, t);
        }
    }

    std::unordered_map<std::string, std::size_t> per_user;
    for (const auto& e : events) ++per_user[e.user];

    InteractionLog log;
    bool any = false;
    for (const auto& e : events) {
        if (per_user[e.user] < min_actions) continue;
        const UserId u = log.users.intern(e.user);
        const ItemId i = log.items.intern(e.item);
        log.interactions.push_back({u, i, e.t});
        if (!any) {
            log.t_min = log.t_max = e.t;
            any = true;
        }
        log.t_min = std::min(log.t_min, e.t);
        log.t_max = std::max(log.t_max, e.t);
    }
    if (log.interactions.empty()) throw ValidationError("empty dataset after filtering users with fewer than " +
                                                        std::to_string(min_actions) + " actions");
    return log;
}

/// Reads `user_id<TAB>item_id<TAB>timestamp` lines. Duplicate (user, item)
/// pairs keep the earliest timestamp; users with fewer than `min_actions`
/// distinct items are dropped in a single pass.
inline InteractionLog load_interactions(const std::string& path, std::size_t min_actions = 5) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open interactions file: " + path);
    return parse_interactions(in, min_actions);
}

inline void write_interactions(const InteractionLog& log, std::ostream& out) {
    for (const auto& e : log.interactions)
        out << log.users.name(e.user) << '\t' << log.items.name(e.item) << '\t' << e.timestamp << '\n';
}

inline Taxonomy parse_taxonomy(std::istream& in, const InteractionLog& log) {
    Taxonomy tax;
    tax.category_of.assign(log.num_items(), Taxonomy::kUnknown);
    IdMap categories;
    categories.intern("<unknown>");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto text = detail::trim(line);
        if (text.empty() || text.front() == '#') continue;
        const auto fields = detail::split(text, '\t');
        if (fields.size() != 2 || fields[0].empty() || fields[1].empty())
            throw ParseError("expected item_id<TAB>category_id", line_no);
        const auto item = log.items.find(fields[0]);
        const auto cat = categories.intern(fields[1]);
        if (item) tax.category_of[*item] = cat;
    }
    tax.category_names = categories.names();
    return tax;
}

inline Taxonomy load_taxonomy(const std::string& path, const InteractionLog& log) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open taxonomy file: " + path);
    return parse_taxonomy(in, log);
}

// Every item in the unknown category.
inline Taxonomy flat_taxonomy(std::size_t num_items) {
    Taxonomy tax;
    tax.category_of.assign(num_items, Taxonomy::kUnknown);
    return tax;
}

inline Split split_leave_one_out(const InteractionLog& log, std::uint64_t seed) {
    Split split;
    split.num_users = log.num_users();
    split.num_items = log.num_items();
    split.t_min = log.t_min;
    split.t_max = log.t_max;

    std::vector<std::vector<ItemTime>> per_user(log.num_users());
    for (const auto& e : log.interactions) per_user[e.user].push_back({e.item, e.timestamp});

    Rng rng(seed);
    split.train.resize(log.num_users());
    split.validation.resize(log.num_users());
    split.test.resize(log.num_users());
    split.train_items.resize(log.num_users());
    split.observed_items.resize(log.num_users());
    for (std::size_t u = 0; u < per_user.size(); ++u) {
        auto events = per_user[u];
        if (events.size() < 3)
            throw ValidationError("user " + log.users.name(static_cast<UserId>(u)) +
                                  " has fewer than 3 interactions; cannot hold out validation and test items");
        const auto v = rng.index(events.size());
        split.validation[u] = events[v];
        events.erase(events.begin() + static_cast<std::ptrdiff_t>(v));
        const auto t = rng.index(events.size());
        split.test[u] = events[t];
        events.erase(events.begin() + static_cast<std::ptrdiff_t>(t));
        split.train[u] = std::move(events);

        auto& tr = split.train_items[u];
        for (const auto& p : split.train[u]) tr.push_back(p.item);
        std::sort(tr.begin(), tr.end());
        auto& ob = split.observed_items[u];
        ob = tr;
        ob.push_back(split.validation[u].item);
        ob.push_back(split.test[u].item);
        std::sort(ob.begin(), ob.end());
    }
    return split;
}

inline std::vector<std::size_t> train_counts(const Split& split) {
    std::vector<std::size_t> counts(split.num_items, 0);
    for (const auto& p : split.train)
        for (const auto& e : p) ++counts[e.item];
    return counts;
}

/// Items with fewer than `threshold` training positives, ascending.
inline std::vector<ItemId> cold_items(const Split& split, std::size_t threshold = 5) {
    const auto counts = train_counts(split);
    std::vector<ItemId> cold;
    for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] < threshold) cold.push_back(static_cast<ItemId>(i));
    return cold;
}

}  // namespace tvbpr
