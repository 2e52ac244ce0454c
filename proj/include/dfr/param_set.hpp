#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dfr/errors.hpp"
#include "dfr/tensor.hpp"

namespace dfr {

// Named map from parameter id to a grad-requiring tensor. Iteration order is
// the insertion order, stable across runs. Entries share storage with the
// owning model: updating a parameter here updates the model.
class ParameterSet {
public:
    using Entry = std::pair<std::string, Tensor>;

    // Parameters are created with requires_grad=true; a FreezeGuard may have
    // flipped that temporarily, so it is not re-checked here (the optimizer
    // checks at step time).
    void add(std::string id, Tensor t) {
        if (!t.defined()) throw ContractError("ParameterSet::add: undefined tensor for '" + id + "'");
        if (index_.count(id)) throw ContractError("ParameterSet::add: duplicate parameter id '" + id + "'");
        index_.emplace(id, entries_.size());
        entries_.emplace_back(std::move(id), std::move(t));
    }

    // Entries of `other` appended in order; duplicate ids rejected.
    void merge(const ParameterSet& other) {
        for (const auto& [id, t] : other.entries_) {
            if (index_.count(id)) {
                throw ContractError("ParameterSet::merge: duplicate parameter id '" + id + "'");
            }
            index_.emplace(id, entries_.size());
            entries_.emplace_back(id, t);
        }
    }

    bool contains(const std::string& id) const { return index_.count(id) != 0; }

    Tensor& get(const std::string& id) {
        auto it = index_.find(id);
        if (it == index_.end()) throw ContractError("ParameterSet::get: unknown id '" + id + "'");
        return entries_[it->second].second;
    }

    const Tensor& get(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw ContractError("ParameterSet::get: unknown id '" + id + "'");
        return entries_[it->second].second;
    }

    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    std::vector<Entry>::iterator begin() { return entries_.begin(); }
    std::vector<Entry>::iterator end() { return entries_.end(); }
    std::vector<Entry>::const_iterator begin() const { return entries_.begin(); }
    std::vector<Entry>::const_iterator end() const { return entries_.end(); }

    void zero_grad_all() {
        for (auto& [id, t] : entries_) t.zero_grad();
    }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [id, t] : entries_) out.push_back(id);
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Scoped requires_grad=false over a parameter set; restores prior flags.
// Frozen parameters behave as constants: no graph recording, no grads.
class FreezeGuard {
public:
    explicit FreezeGuard(ParameterSet params) : params_(std::move(params)) {
        prior_.reserve(params_.size());
        for (auto& [id, t] : params_) {
            prior_.push_back(t.requires_grad());
            t.set_requires_grad(false);
        }
    }

    ~FreezeGuard() {
        size_t i = 0;
        for (auto& [id, t] : params_) t.set_requires_grad(prior_[i++]);
    }

    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    ParameterSet params_;
    std::vector<bool> prior_;
};

}  // namespace dfr
