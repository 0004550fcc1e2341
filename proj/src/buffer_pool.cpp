#include <riot/buffer_pool.hpp>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

namespace riot {

namespace {
std::atomic<std::uint64_t> next_file_id{1};

[[noreturn]] void throw_io(const std::string& what, const std::filesystem::path& p) {
  throw IoError(what + " '" + p.string() + "': " + std::strerror(errno));
}
}  // namespace

std::string to_string(const Shape& s) {
  return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

BlockFile::BlockFile(std::filesystem::path path, int fd, Index block_scalars)
    : id_(next_file_id++), path_(std::move(path)), fd_(fd), block_scalars_(block_scalars) {}

BlockFile::~BlockFile() {
  if (fd_ >= 0) ::close(fd_);
  if (remove_on_close_) {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
}

void BlockFile::read_block(std::uint64_t block, std::span<double> out) const {
  const auto bytes = static_cast<std::size_t>(block_scalars_) * sizeof(double);
  const auto offset = static_cast<off_t>((block + 1) * bytes);
  auto* dst = reinterpret_cast<char*>(out.data());
  std::size_t done = 0;
  while (done < bytes) {
    ssize_t n = ::pread(fd_, dst + done, bytes - done, offset + static_cast<off_t>(done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_io("read failed on", path_);
    }
    if (n == 0) {
      std::ostringstream os;
      os << "short read of block " << block << " in '" << path_.string() << "'";
      throw FormatError(os.str());
    }
    done += static_cast<std::size_t>(n);
  }
}

void BlockFile::write_block(std::uint64_t block, std::span<const double> in) const {
  const auto bytes = static_cast<std::size_t>(block_scalars_) * sizeof(double);
  const auto offset = static_cast<off_t>((block + 1) * bytes);
  const auto* src = reinterpret_cast<const char*>(in.data());
  std::size_t done = 0;
  while (done < bytes) {
    ssize_t n = ::pwrite(fd_, src + done, bytes - done, offset + static_cast<off_t>(done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_io("write failed on", path_);
    }
    done += static_cast<std::size_t>(n);
  }
}

void ResourceBudget::validate() const {
  if (block_scalars < 1) throw BudgetError("block size must be positive");
  if (memory_scalars % block_scalars != 0) {
    throw BudgetError("memory budget " + std::to_string(memory_scalars) +
                      " is not a multiple of the block size " + std::to_string(block_scalars));
  }
  if (memory_scalars < 3 * block_scalars) {
    throw BudgetError("memory budget " + std::to_string(memory_scalars) +
                      " holds fewer than 3 blocks of " + std::to_string(block_scalars));
  }
}

BlockHandle& BlockHandle::operator=(BlockHandle&& o) noexcept {
  if (this != &o) {
    release();
    pool_ = std::exchange(o.pool_, nullptr);
    frame_ = o.frame_;
    data_ = std::exchange(o.data_, nullptr);
    n_ = o.n_;
  }
  return *this;
}

void BlockHandle::release() {
  if (pool_) {
    pool_->unpin(frame_);
    pool_ = nullptr;
    data_ = nullptr;
  }
}

BufferPool::BufferPool(ResourceBudget budget) : budget_(budget) {
  budget_.validate();
  const auto n = static_cast<std::size_t>(budget_.frames());
  frames_.resize(n);
  free_.reserve(n);
  for (std::size_t i = n; i-- > 0;) free_.push_back(i);
}

BufferPool::~BufferPool() {
  // Best effort; a destructor cannot report I/O failures.
  try {
    flush();
  } catch (...) {
  }
}

Index BufferPool::resident_scalars() const {
  return static_cast<Index>(frames_.size() - free_.size()) * budget_.block_scalars;
}

BlockHandle BufferPool::get_block(const std::shared_ptr<BlockFile>& file, std::uint64_t block,
                                  AccessMode mode) {
  if (file->block_scalars() != budget_.block_scalars) {
    throw FormatError("'" + file->path().string() + "' uses blocks of " +
                      std::to_string(file->block_scalars()) + " scalars, pool uses " +
                      std::to_string(budget_.block_scalars));
  }
  const Key key{file->id(), block};
  std::size_t idx;
  if (auto it = table_.find(key); it != table_.end()) {
    idx = it->second;
    Frame& f = frames_[idx];
    if (f.in_lru) {
      lru_.erase(f.lru_pos);
      f.in_lru = false;
    }
  } else {
    idx = acquire_frame();
    Frame& f = frames_[idx];
    f.data.resize(static_cast<std::size_t>(budget_.block_scalars));
    f.file = file;
    f.block = block;
    f.dirty = false;
    if (mode == AccessMode::Read) {
      try {
        file->read_block(block, f.data);
      } catch (...) {
        f.file.reset();
        free_.push_back(idx);
        throw;
      }
      ++counters_.blocks_read;
    } else {
      std::fill(f.data.begin(), f.data.end(), 0.0);
    }
    table_.emplace(key, idx);
    if (resident_scalars() > budget_.memory_scalars) {
      throw BudgetError("resident scalars exceed the memory budget");
    }
  }
  Frame& f = frames_[idx];
  if (mode == AccessMode::Write) f.dirty = true;
  if (f.pins++ == 0) {
    ++pinned_;
    peak_pinned_ = std::max(peak_pinned_, pinned_);
  }
  return BlockHandle(this, idx, f.data.data(), budget_.block_scalars);
}

std::size_t BufferPool::acquire_frame() {
  if (!free_.empty()) {
    std::size_t idx = free_.back();
    free_.pop_back();
    return idx;
  }
  if (lru_.empty()) {
    throw PoolExhausted("buffer pool exhausted: all " + std::to_string(frames_.size()) +
                        " frames are pinned");
  }
  std::size_t victim = lru_.front();
  Frame& f = frames_[victim];
  if (f.dirty) write_back(f);
  lru_.pop_front();
  f.in_lru = false;
  table_.erase(Key{f.file->id(), f.block});
  f.file.reset();
  return victim;
}

void BufferPool::write_back(Frame& f) {
  f.file->write_block(f.block, f.data);
  ++counters_.blocks_written;
  f.dirty = false;
}

void BufferPool::unpin(std::size_t idx) {
  Frame& f = frames_[idx];
  if (--f.pins == 0) {
    --pinned_;
    lru_.push_back(idx);
    f.lru_pos = std::prev(lru_.end());
    f.in_lru = true;
  }
}

void BufferPool::drop(std::size_t idx) {
  Frame& f = frames_[idx];
  if (f.in_lru) {
    lru_.erase(f.lru_pos);
    f.in_lru = false;
  }
  table_.erase(Key{f.file->id(), f.block});
  f.file.reset();
  f.dirty = false;
  free_.push_back(idx);
}

void BufferPool::flush() {
  for (auto& f : frames_) {
    if (f.file && f.dirty) write_back(f);
  }
}

void BufferPool::flush(const BlockFile& file) {
  for (auto& f : frames_) {
    if (f.file && f.file->id() == file.id() && f.dirty) write_back(f);
  }
}

void BufferPool::discard(const BlockFile& file) {
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    Frame& f = frames_[i];
    if (f.file && f.file->id() == file.id()) {
      if (f.pins > 0) throw Error("cannot discard a pinned block of '" + file.path().string() + "'");
      drop(i);
    }
  }
}

void BufferPool::evict_all() {
  flush();
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    Frame& f = frames_[i];
    if (f.file && f.pins == 0) drop(i);
  }
}

void BufferPool::reset_counters() {
  counters_ = {};
  peak_pinned_ = pinned_;
}

}  // namespace riot
