#pragma once

#include "etree/quantizer.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

namespace etree {

struct Neighbor {
    VectorId id = 0;
    float distance = 0.0F;

    /// Ascending distance, ties to the smaller id.
    friend bool operator<(const Neighbor& a, const Neighbor& b) noexcept {
        return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
    }
    bool operator==(const Neighbor&) const = default;
};

/// Keeps the k best candidates in a bounded max-heap.
class TopK {
public:
    explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k); }

    void push(VectorId id, float distance) {
        if (k_ == 0) {
            return;
        }
        const Neighbor n{id, distance};
        if (heap_.size() < k_) {
            heap_.push_back(n);
            std::push_heap(heap_.begin(), heap_.end());
        } else if (n < heap_.front()) {
            std::pop_heap(heap_.begin(), heap_.end());
            heap_.back() = n;
            std::push_heap(heap_.begin(), heap_.end());
        }
    }

    /// Sorted ascending; leaves the heap empty.
    std::vector<Neighbor> take() {
        std::sort_heap(heap_.begin(), heap_.end());
        return std::move(heap_);
    }

private:
    std::size_t k_;
    std::vector<Neighbor> heap_;
};

}  // namespace etree
