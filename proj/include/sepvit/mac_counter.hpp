#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sepvit {

/// Forward-pass MAC meter. While active, every matmul/conv adds its
/// multiply-accumulate count under the current scope label; softmax, layer
/// norm, GELU, scaling and bias adds contribute zero by convention.
/// Single-threaded: one active counter per thread, one forward at a time.
class MacCounter {
 public:
  void add(std::uint64_t macs) {
    auto it = index_.find(label_);
    if (it == index_.end()) {
      index_.emplace(label_, entries_.size());
      entries_.emplace_back(label_, macs);
    } else {
      entries_[it->second].second += macs;
    }
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& e : entries_) t += e.second;
    return t;
  }

  std::uint64_t at(const std::string& label) const {
    auto it = index_.find(label);
    return it == index_.end() ? 0 : entries_[it->second].second;
  }

  /// Insertion-ordered (label, macs) pairs, so reports are deterministic.
  const std::vector<std::pair<std::string, std::uint64_t>>& entries() const { return entries_; }

  static MacCounter*& active() {
    thread_local MacCounter* counter = nullptr;
    return counter;
  }

 private:
  friend class MacScope;
  friend class CountingScope;
  std::vector<std::pair<std::string, std::uint64_t>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> stack_;
  std::string label_;

  void push(const std::string& seg) {
    stack_.push_back(seg);
    rebuild();
  }
  void pop() {
    stack_.pop_back();
    rebuild();
  }
  void rebuild() {
    label_.clear();
    for (std::size_t i = 0; i < stack_.size(); ++i) {
      if (i) label_ += '.';
      label_ += stack_[i];
    }
  }
};

/// RAII: makes a counter the active one for the current thread.
class CountingScope {
 public:
  explicit CountingScope(MacCounter& c) : prev_(MacCounter::active()) {
    MacCounter::active() = &c;
  }
  ~CountingScope() { MacCounter::active() = prev_; }
  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

 private:
  MacCounter* prev_;
};

/// RAII: appends one label segment ("stage1", "block0", "dwa", ...) while alive.
class MacScope {
 public:
  explicit MacScope(const std::string& segment) : counter_(MacCounter::active()) {
    if (counter_) counter_->push(segment);
  }
  ~MacScope() {
    if (counter_) counter_->pop();
  }
  MacScope(const MacScope&) = delete;
  MacScope& operator=(const MacScope&) = delete;

 private:
  MacCounter* counter_;
};

inline void count_macs(std::uint64_t macs) {
  if (MacCounter* c = MacCounter::active()) c->add(macs);
}

}  // namespace sepvit
