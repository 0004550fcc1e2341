#pragma once

#include <riot/common.hpp>

#include <cstddef>
#include <filesystem>
#include <list>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

namespace riot {

/// An open data file addressed in fixed-size blocks of `block_scalars` doubles.
/// Block 0 starts right after the header block, which is never addressed here.
class BlockFile {
 public:
  BlockFile(std::filesystem::path path, int fd, Index block_scalars);
  ~BlockFile();
  BlockFile(const BlockFile&) = delete;
  BlockFile& operator=(const BlockFile&) = delete;

  std::uint64_t id() const { return id_; }
  const std::filesystem::path& path() const { return path_; }
  Index block_scalars() const { return block_scalars_; }

  void read_block(std::uint64_t block, std::span<double> out) const;
  void write_block(std::uint64_t block, std::span<const double> in) const;

  /// Unlink the file once the last reference goes away.
  void remove_on_close(bool v) { remove_on_close_ = v; }

 private:
  std::uint64_t id_;
  std::filesystem::path path_;
  int fd_;
  Index block_scalars_;
  bool remove_on_close_ = false;
};

struct ResourceBudget {
  Index memory_scalars = 64 * 1024;  // M
  Index block_scalars = 1024;        // B

  /// Throws BudgetError unless M >= 3B and B divides M.
  void validate() const;
  Index frames() const { return memory_scalars / block_scalars; }
};

struct IoCounters {
  std::uint64_t blocks_read = 0;
  std::uint64_t blocks_written = 0;
  std::uint64_t elements_computed = 0;

  std::uint64_t blocks_total() const { return blocks_read + blocks_written; }
  friend bool operator==(const IoCounters&, const IoCounters&) = default;
};

enum class AccessMode {
  Read,   // fetch from disk on miss
  Write,  // caller overwrites the whole block; a miss zero-fills without reading
};

class BufferPool;

/// RAII pin on one resident block.
class BlockHandle {
 public:
  BlockHandle() = default;
  BlockHandle(BufferPool* pool, std::size_t frame, double* data, Index n)
      : pool_(pool), frame_(frame), data_(data), n_(n) {}
  BlockHandle(BlockHandle&& o) noexcept { *this = std::move(o); }
  BlockHandle& operator=(BlockHandle&& o) noexcept;
  BlockHandle(const BlockHandle&) = delete;
  BlockHandle& operator=(const BlockHandle&) = delete;
  ~BlockHandle() { release(); }

  std::span<double> data() const { return {data_, static_cast<std::size_t>(n_)}; }
  bool valid() const { return pool_ != nullptr; }
  void release();

 private:
  BufferPool* pool_ = nullptr;
  std::size_t frame_ = 0;
  double* data_ = nullptr;
  Index n_ = 0;
};

/// Fixed set of M/B block frames with LRU replacement over unpinned frames.
///
/// Every physical data-block transfer goes through here and is counted
/// exactly once. Dirty frames are written back lazily, at eviction or flush.
class BufferPool {
 public:
  explicit BufferPool(ResourceBudget budget);
  BufferPool(const BufferPool&) = delete;
  BufferPool& operator=(const BufferPool&) = delete;
  ~BufferPool();

  const ResourceBudget& budget() const { return budget_; }

  BlockHandle get_block(const std::shared_ptr<BlockFile>& file, std::uint64_t block,
                        AccessMode mode);

  /// Write back every dirty frame. Frames stay resident.
  void flush();
  void flush(const BlockFile& file);
  /// Drop every frame of `file` without writing it back.
  void discard(const BlockFile& file);
  /// Flush, then drop all frames so the next access of any block is a miss.
  void evict_all();

  IoCounters stats() const { return counters_; }
  void reset_counters();
  void add_elements_computed(std::uint64_t n) { counters_.elements_computed += n; }

  Index pinned_frames() const { return pinned_; }
  Index peak_pinned_frames() const { return peak_pinned_; }
  void reset_peak_pinned() { peak_pinned_ = pinned_; }
  Index resident_scalars() const;

 private:
  friend class BlockHandle;

  struct Key {
    std::uint64_t file;
    std::uint64_t block;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      return std::hash<std::uint64_t>{}(k.file * 0x9E3779B97F4A7C15ull ^ k.block);
    }
  };
  struct Frame {
    std::vector<double> data;
    std::shared_ptr<BlockFile> file;
    std::uint64_t block = 0;
    int pins = 0;
    bool dirty = false;
    bool in_lru = false;
    std::list<std::size_t>::iterator lru_pos;
  };

  void unpin(std::size_t frame);
  std::size_t acquire_frame();
  void write_back(Frame& f);
  void drop(std::size_t frame);

  ResourceBudget budget_;
  std::vector<Frame> frames_;
  std::vector<std::size_t> free_;
  std::list<std::size_t> lru_;  // front = least recently used
  std::unordered_map<Key, std::size_t, KeyHash> table_;
  IoCounters counters_;
  Index pinned_ = 0;
  Index peak_pinned_ = 0;
};

}  // namespace riot
