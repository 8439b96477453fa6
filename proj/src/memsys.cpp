#include "mempool/memsys.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>

#include <fmt/format.h>

namespace mempool {

std::string_view to_string(RequestKind k) {
  switch (k) {
  case RequestKind::Read:
    return "read";
  case RequestKind::Write:
    return "write";
  case RequestKind::QueueOp:
    return "queue";
  }
  return "?";
}

Location map_address(const ValidatedConfig &cfg, WordAddr addr) {
  if (addr >= cfg.total_spm_words())
    throw std::out_of_range(fmt::format("word address {} outside the {}-word SPM", addr,
                                        cfg.total_spm_words()));
  const std::uint32_t banks = cfg.total_banks();
  return {cfg.bank_from_flat(addr % banks), addr / banks};
}

Scratchpad::Scratchpad(const ValidatedConfig &cfg)
    : cfg_(cfg), words_(cfg.total_spm_words(), 0) {}

std::size_t Scratchpad::index(BankId bank, std::uint32_t offset) const {
  if (offset >= cfg_->bank_words)
    throw std::out_of_range(
        fmt::format("bank offset {} outside a {}-word bank", offset, cfg_->bank_words));
  if (bank.group >= cfg_->groups || bank.tile >= cfg_->tiles_per_group ||
      bank.bank >= cfg_->banks_per_tile)
    throw std::out_of_range(
        fmt::format("bank (g{}, t{}, b{}) out of range", bank.group, bank.tile, bank.bank));
  return std::size_t(offset) * cfg_.total_banks() + cfg_.flat_bank(bank);
}

std::uint32_t Scratchpad::read_word(BankId bank, std::uint32_t offset) const {
  return words_[index(bank, offset)];
}

void Scratchpad::write_word(BankId bank, std::uint32_t offset, std::uint32_t value) {
  words_[index(bank, offset)] = value;
}

std::optional<std::size_t> arbitrate(std::span<MemRequest> contenders, Cycle cycle,
                                     ArbitrationCursor &cursor, std::uint32_t num_cores) {
  if (contenders.empty())
    return std::nullopt;
  const std::uint64_t start =
      cursor.last_granted ? (std::uint64_t(*cursor.last_granted) + 1) % num_cores : 0;
  std::size_t best = 0;
  std::uint64_t best_dist = UINT64_MAX;
  for (std::size_t i = 0; i < contenders.size(); ++i) {
    const auto &r = contenders[i];
    const std::uint64_t dist = (r.origin + std::uint64_t(num_cores) - start) % num_cores;
    if (dist < best_dist || (dist == best_dist && r.req_id < contenders[best].req_id)) {
      best = i;
      best_dist = dist;
    }
  }
  contenders[best].grant_cycle = cycle;
  cursor.last_granted = contenders[best].origin;
  return best;
}

MemorySystem::MemorySystem(const ValidatedConfig &cfg)
    : cfg_(cfg), spm_(cfg), pending_(cfg.total_banks()), cursors_(cfg.total_banks()),
      is_active_(cfg.total_banks(), 0), grants_(cfg.total_banks(), 0) {
  const Cycle max_latency = cfg->latency_local_cycles + 2 * Cycle(cfg->latency_per_level_cycles);
  const Cycle size = std::bit_ceil(max_latency + 1);
  wheel_.resize(size);
  wheel_mask_ = size - 1;
  active_.reserve(cfg.total_banks());
}

std::uint64_t MemorySystem::issue(CoreId origin, WordAddr addr, RequestKind kind, Cycle cycle,
                                  std::uint32_t data, std::uint64_t tag) {
  if (origin >= cfg_.total_cores())
    throw std::out_of_range(fmt::format("core id {} out of range", origin));
  const Location loc = map_address(cfg_, addr);
  MemRequest r;
  r.req_id = next_id_++;
  r.origin = origin;
  r.target = loc.bank;
  r.offset = loc.offset;
  r.kind = kind;
  r.issue_cycle = cycle;
  r.data = data;
  r.tag = tag;
  const std::uint32_t flat = addr % cfg_.total_banks();
  pending_[flat].push_back(r);
  if (!is_active_[flat]) {
    is_active_[flat] = 1;
    active_.push_back(flat);
  }
  ++waiting_;
  return r.req_id;
}

std::size_t MemorySystem::arbitrate(Cycle cycle) {
  std::size_t granted = 0;
  std::size_t keep = 0;
  for (std::size_t n = 0; n < active_.size(); ++n) {
    const std::uint32_t flat = active_[n];
    auto &waiting = pending_[flat];
    const auto win = mempool::arbitrate(waiting, cycle, cursors_[flat], cfg_.total_cores());
    MemRequest r = waiting[*win];
    waiting.erase(waiting.begin() + std::ptrdiff_t(*win));
    conflict_cycles_ += waiting.size();

    if (r.kind == RequestKind::Write)
      spm_.write_word(r.target, r.offset, r.data);
    else
      r.data = spm_.read_word(r.target, r.offset);
    const Cycle due = cycle + zero_load_latency(cfg_, r.origin, r.target);
    wheel_[due & wheel_mask_].push_back(r);
    ++grants_[flat];
    ++granted;
    ++in_flight_;
    --waiting_;

    if (waiting.empty())
      is_active_[flat] = 0;
    else
      active_[keep++] = flat;
  }
  active_.resize(keep);
  return granted;
}

} // namespace mempool
