//! Output current of the regulator across loads, and what the safety
//! checks refuse.
//!
//! cargo run -p haptiforge --example current_limits

use haptiforge::stimulator::{output_current, validate_pattern, PulsePattern, SafetyLimits};

fn main() -> Result<(), haptiforge::Error> {
    let limits = SafetyLimits::default();
    let r_emitter = 1_000.0;
    println!("supply {} V, emitter {r_emitter} ohm, control 3 V (3 mA set-point)", limits.supply_voltage_v);
    println!("{:>10}  {:>9}  {:>12}", "load ohm", "out mA", "compliance");
    for r_load in [5e3, 20e3, 29e3, 44e3, 60e3, 89e3, 150e3] {
        let ma = output_current(3.0, r_emitter, r_load, &limits)?;
        let compliance = limits.supply_voltage_v / (r_load + r_emitter) * 1e3;
        println!("{r_load:>10.0}  {ma:>9.3}  {compliance:>12.3}");
    }

    let too_much = PulsePattern::new(3, 50.0, 0.1, 3.2, 1000.0);
    println!("\n3.2 mA pattern: {}", validate_pattern(&too_much, &limits).unwrap_err());
    // Even a permissive configured limit is held at the 3 mA hard cap.
    let loose = SafetyLimits::new(8.0, 90.0, 1.5)?;
    println!("limit 8 mA enforces {} mA", loose.amplitude_cap());
    let low = limits.lowered_to(1.2);
    println!("lowered to 1.2 mA, asking for 2.0 mA again keeps {} mA", low.lowered_to(2.0).amplitude_cap());
    let short = PulsePattern::new(3, 10_000.0, 0.01, 1.0, 10.0);
    println!("1 us pulse: {}", validate_pattern(&short, &limits).unwrap_err());
    Ok(())
}
