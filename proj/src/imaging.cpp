#include "ento/imaging.hpp"

#include <algorithm>
#include <cmath>

#include "ento/errors.hpp"
#include "ento/synth.hpp"

namespace ento::imaging {

FrameRing::FrameRing(std::size_t capacity) : cap_(capacity) {
  if (capacity == 0) throw DomainError("ring capacity must be positive");
  slots_.reserve(capacity);
}

void FrameRing::push(Frame frame) {
  if (count_ < cap_) {
    slots_.push_back(std::move(frame));
    ++count_;
    head_ = count_ % cap_;
    return;
  }
  slots_[head_] = std::move(frame);
  head_ = (head_ + 1) % cap_;
  ++dropped_;
}

const Frame& FrameRing::at(std::size_t i) const {
  if (i >= count_) throw DomainError("ring index out of range");
  if (count_ < cap_) return slots_[i];
  return slots_[(head_ + i) % cap_];
}

int ring_capacity(double fps, double seconds) {
  if (!(fps > 0) || !(seconds > 0))
    throw DomainError("fps and seconds must be positive");
  return static_cast<int>(std::ceil(fps * seconds));
}

double mean_luminance(const Frame& frame) {
  double sum = 0;
  const std::uint8_t* p = frame.pixels.data();
  std::size_t n = static_cast<std::size_t>(frame.width) * frame.height;
  for (std::size_t i = 0; i < n; ++i, p += 3) sum += luma601(p[0], p[1], p[2]);
  return sum / static_cast<double>(n);
}

void validate(const TriggerConfig& cfg) {
  if (cfg.window < 1) throw ConfigError("trigger window must be at least 1");
  if (!(cfg.ratio > 0)) throw ConfigError("trigger ratio must be positive");
  if (cfg.cooldown < 0) throw ConfigError("cooldown must be non-negative");
  if (cfg.followup_count < 0)
    throw ConfigError("followup_count must be non-negative");
  if (cfg.followup_stride < 1)
    throw ConfigError("followup_stride must be at least 1");
}

namespace {

std::vector<std::size_t> event_indices(std::size_t trigger,
                                       const TriggerConfig& cfg,
                                       std::size_t series_len) {
  std::vector<std::size_t> out{trigger};
  for (int k = 1; k <= cfg.followup_count; ++k) {
    std::size_t idx = trigger + static_cast<std::size_t>(k) * cfg.followup_stride;
    if (series_len && idx >= series_len) break;
    out.push_back(idx);
  }
  return out;
}

}  // namespace

std::vector<CaptureEvent> detect_triggers(const std::vector<double>& lumas,
                                          const TriggerConfig& cfg) {
  validate(cfg);
  std::vector<CaptureEvent> events;
  std::size_t w = static_cast<std::size_t>(cfg.window);
  std::size_t next_eligible = w;
  double window_sum = 0;
  for (std::size_t i = 0; i < lumas.size(); ++i) {
    if (i >= w) {
      double mean = window_sum / static_cast<double>(w);
      if (i >= next_eligible && lumas[i] >= cfg.ratio * mean) {
        events.push_back({i, event_indices(i, cfg, lumas.size())});
        next_eligible = i + static_cast<std::size_t>(cfg.cooldown) + 1;
      }
      window_sum -= lumas[i - w];
    }
    window_sum += lumas[i];
  }
  return events;
}

CaptureSession::CaptureSession(std::size_t ring_capacity, TriggerConfig cfg)
    : ring_(ring_capacity), cfg_(cfg) {
  validate(cfg_);
}

void CaptureSession::push(const Frame& frame) {
  std::size_t i = next_index_++;
  double luma = mean_luminance(frame);
  ring_.push(frame);
  const Frame& stored = ring_.at(ring_.size() - 1);

  std::size_t w = static_cast<std::size_t>(cfg_.window);
  if (window_.size() == w) {
    double mean = 0;
    for (double v : window_) mean += v;
    mean /= static_cast<double>(w);
    if (i >= std::max(next_eligible_, w) && luma >= cfg_.ratio * mean) {
      Pending p;
      p.out.event.trigger_index = i;
      p.wanted = event_indices(i, cfg_, 0);
      pending_.push_back(std::move(p));
      next_eligible_ = i + static_cast<std::size_t>(cfg_.cooldown) + 1;
    }
    window_.pop_front();
  }
  window_.push_back(luma);

  for (auto it = pending_.begin(); it != pending_.end();) {
    if (!it->wanted.empty() && it->wanted.front() == i) {
      it->out.event.frame_indices.push_back(i);
      it->out.frames.push_back(stored);
      it->wanted.erase(it->wanted.begin());
    }
    if (it->wanted.empty()) {
      done_.push_back(std::move(it->out));
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
}

std::vector<CapturedFrames> CaptureSession::take_events() {
  std::vector<CapturedFrames> out;
  out.swap(done_);
  return out;
}

std::vector<CapturedFrames> CaptureSession::finish() {
  for (auto& p : pending_) done_.push_back(std::move(p.out));
  pending_.clear();
  std::sort(done_.begin(), done_.end(),
            [](const CapturedFrames& a, const CapturedFrames& b) {
              return a.event.trigger_index < b.event.trigger_index;
            });
  return take_events();
}

void validate(const TransitSpec& spec) {
  if (spec.width < 16 || spec.height < 16)
    throw ConfigError("transit frames must be at least 16x16");
  if (spec.flash_count < 1) throw ConfigError("flash_count must be positive");
  if (spec.flash_start < 1)
    throw ConfigError("flash_start must leave at least one ambient frame");
  if (spec.flash_start + spec.flash_count > spec.frame_count)
    throw ConfigError("flash frames do not fit in the series");
  if (spec.class_id < 0 || spec.class_id >= synth::kClassCount)
    throw ConfigError("class id out of range");
  if (spec.noise < 0) throw ConfigError("noise must be non-negative");
  if (spec.ambient_gray < 0 || spec.flash_gray > 255 ||
      spec.ambient_gray >= spec.flash_gray)
    throw ConfigError("need ambient_gray < flash_gray within byte range");
}

TransitResult synth_transit(const TransitSpec& spec, rng::Generator& rng) {
  validate(spec);
  TransitResult out;
  synth::InsectStyle style = synth::style_for_class(spec.class_id);
  double length = rng.uniform(0.24, 0.30) * std::min(spec.width, spec.height);
  double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  double cy = spec.height * rng.uniform(0.42, 0.58);

  for (int i = 0; i < spec.frame_count; ++i) {
    Frame f(spec.width, spec.height, 0, static_cast<double>(i));
    bool lit = i >= spec.flash_start && i < spec.flash_start + spec.flash_count;
    synth::fill_background(f, rng, lit ? spec.flash_gray : spec.ambient_gray,
                           spec.noise);
    if (lit) {
      int k = i - spec.flash_start;
      double step = spec.flash_count > 1
                        ? static_cast<double>(k) / (spec.flash_count - 1)
                        : 0.5;
      synth::Pose pose;
      pose.length = length;
      pose.angle = angle;
      pose.cx = spec.width * (0.32 + 0.36 * step);
      pose.cy = cy;
      detect::Mask mask(spec.width, spec.height);
      out.boxes.push_back(synth::render_insect(f, mask, style, pose));
      out.masks.push_back(std::move(mask));
      out.flash_indices.push_back(static_cast<std::size_t>(i));
    }
    out.frames.push_back(std::move(f));
  }
  return out;
}

}  // namespace ento::imaging
