#pragma once

#include <optional>

namespace ento::optics {

// Imaging-design calculator. Lengths are carried in micrometers inside the
// formulas; signatures say where millimeters cross the boundary.

struct OpticalConfig {
  double aperture_number = 8.0;    // f-number N
  double wavelength = 0.55;        // um, green / eye-response peak
  double pixel_pitch = 1.55;       // um
  double sensor_width = 6.287;     // mm, active sensor width
  double fov_width = 60.0;         // mm, object-plane field of view
  // um; when unset the computed Airy diameter is used (diffraction-limited).
  std::optional<double> circle_of_confusion;
  double flash_duration = 500e-6;  // s
  double exposure_time = 23.5e-3;  // s
};

// Throws DomainError on non-positive fields or fov_width <= sensor_width.
void validate(const OpticalConfig& cfg);

struct OpticsReport {
  double magnification = 0;             // sensor side / object side
  double airy_diameter_chip = 0;        // um
  double depth_of_field = 0;            // mm
  double blur_object = 0;               // mm, path during one flash
  double blur_chip = 0;                 // um
  double blur_pixels = 0;
  double blur_to_diffraction_ratio = 0; // blur_chip / airy_diameter_chip
};

// sensor_width / fov_width; < 1 means the system demagnifies.
double magnification(double sensor_width_mm, double fov_width_mm);

// First-minimum Airy diameter on the chip: 2.44 * lambda * N.
double airy_disk_diameter(double wavelength_um, double aperture_number);

// Thin-lens depth of field 2*N*c*(1+m)/m^2, returned in millimeters.
double depth_of_field(double aperture_number, double circle_of_confusion_um,
                      double magnification);

struct MotionBlur {
  double blur_object = 0;  // mm
  double blur_chip = 0;    // um
  double blur_pixels = 0;
};

// Path covered during one flash, mapped through the magnification onto the
// chip and expressed in pixels.
MotionBlur motion_blur(double speed_mps, double flash_duration_s,
                       double magnification, double pixel_pitch_um);

// Full report combining the operations above for a subject moving at
// insect_speed_mps.
OpticsReport design_report(const OpticalConfig& cfg, double insect_speed_mps);

}  // namespace ento::optics
