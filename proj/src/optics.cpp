#include "ento/optics.hpp"

#include "ento/errors.hpp"

namespace ento::optics {

void validate(const OpticalConfig& cfg) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw DomainError(std::string(name) + " must be positive");
  };
  positive(cfg.aperture_number, "aperture_number");
  positive(cfg.wavelength, "wavelength");
  positive(cfg.pixel_pitch, "pixel_pitch");
  positive(cfg.sensor_width, "sensor_width");
  positive(cfg.fov_width, "fov_width");
  positive(cfg.flash_duration, "flash_duration");
  positive(cfg.exposure_time, "exposure_time");
  if (cfg.circle_of_confusion)
    positive(*cfg.circle_of_confusion, "circle_of_confusion");
  if (cfg.fov_width <= cfg.sensor_width)
    throw DomainError("fov_width must exceed sensor_width");
}

double magnification(double sensor_width_mm, double fov_width_mm) {
  if (!(sensor_width_mm > 0) || !(fov_width_mm > 0))
    throw DomainError("widths must be positive");
  return sensor_width_mm / fov_width_mm;
}

double airy_disk_diameter(double wavelength_um, double aperture_number) {
  if (!(wavelength_um > 0) || !(aperture_number > 0))
    throw DomainError("wavelength and aperture number must be positive");
  return 2.44 * wavelength_um * aperture_number;
}

double depth_of_field(double aperture_number, double circle_of_confusion_um,
                      double magnification) {
  if (!(aperture_number > 0) || !(circle_of_confusion_um > 0) ||
      !(magnification > 0))
    throw DomainError("depth of field inputs must be positive");
  double dof_um = 2.0 * aperture_number * circle_of_confusion_um *
                  (1.0 + magnification) / (magnification * magnification);
  return dof_um / 1000.0;
}

MotionBlur motion_blur(double speed_mps, double flash_duration_s,
                       double magnification, double pixel_pitch_um) {
  if (!(speed_mps >= 0)) throw DomainError("speed must be non-negative");
  if (!(flash_duration_s > 0) || !(magnification > 0) ||
      !(pixel_pitch_um > 0))
    throw DomainError("motion blur inputs must be positive");
  MotionBlur mb;
  mb.blur_object = speed_mps * flash_duration_s * 1000.0;
  mb.blur_chip = mb.blur_object * magnification * 1000.0;
  mb.blur_pixels = mb.blur_chip / pixel_pitch_um;
  return mb;
}

OpticsReport design_report(const OpticalConfig& cfg, double insect_speed_mps) {
  validate(cfg);
  OpticsReport r;
  r.magnification = magnification(cfg.sensor_width, cfg.fov_width);
  r.airy_diameter_chip = airy_disk_diameter(cfg.wavelength, cfg.aperture_number);
  double coc = cfg.circle_of_confusion.value_or(r.airy_diameter_chip);
  r.depth_of_field = depth_of_field(cfg.aperture_number, coc, r.magnification);
  MotionBlur mb = motion_blur(insect_speed_mps, cfg.flash_duration,
                              r.magnification, cfg.pixel_pitch);
  r.blur_object = mb.blur_object;
  r.blur_chip = mb.blur_chip;
  r.blur_pixels = mb.blur_pixels;
  r.blur_to_diffraction_ratio = r.blur_chip / r.airy_diameter_chip;
  return r;
}

}  // namespace ento::optics
