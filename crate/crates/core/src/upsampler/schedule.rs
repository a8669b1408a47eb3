use super::UpsamplerError;

/// Linear β schedule with cumulative products. Index `t` runs over `1..=T`;
/// `alpha_bar(0)` is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, UpsamplerError> {
    if steps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(UpsamplerError::Schedule(format!("T={steps}, β from {beta_start} to {beta_end}")));
    }
    let betas: Vec<f64> = if steps == 1 {
        vec![beta_start]
    } else {
        (0..steps).map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64).collect()
    };
    let mut alpha_bars = Vec::with_capacity(steps + 1);
    alpha_bars.push(1.0);
    for b in &betas {
        let prev = *alpha_bars.last().unwrap();
        alpha_bars.push(prev * (1.0 - b));
    }
    Ok(NoiseSchedule { betas, alpha_bars })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule")
    }
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check(&self, t: usize) -> Result<(), UpsamplerError> {
        if t == 0 || t > self.steps() {
            return Err(UpsamplerError::Timestep { t, steps: self.steps() });
        }
        Ok(())
    }

    /// Variance β̃_t of q(x_{t-1} | x_t, x_0), used as the fixed reverse variance.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t]) * self.betas[t - 1]
    }

    /// Coefficients (c0, ct) of the posterior mean c0·x0 + ct·x_t.
    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        let (ab, ab_prev, b) = (self.alpha_bars[t], self.alpha_bars[t - 1], self.betas[t - 1]);
        (ab_prev.sqrt() * b / (1.0 - ab), (1.0 - b).sqrt() * (1.0 - ab_prev) / (1.0 - ab))
    }

    /// One forward step q(x_t | x_{t-1}) with the given noise.
    pub fn step_forward(&self, prev: &[f32], t: usize, noise: &[f32]) -> Result<Vec<f32>, UpsamplerError> {
        self.check(t)?;
        let b = self.beta(t);
        let (a, s) = ((1.0 - b).sqrt(), b.sqrt());
        Ok(prev.iter().zip(noise).map(|(&x, &e)| (a * x as f64 + s * e as f64) as f32).collect())
    }

    /// DDIM timesteps, descending: evenly spaced from T down to 1.
    pub fn ddim_timesteps(&self, steps: usize) -> Result<Vec<usize>, UpsamplerError> {
        let t_max = self.steps();
        if steps == 0 || steps > t_max {
            return Err(UpsamplerError::Schedule(format!("{steps} sampling steps with T={t_max}")));
        }
        if steps == 1 {
            return Ok(vec![t_max]);
        }
        Ok((0..steps)
            .rev()
            .map(|i| 1 + ((i * (t_max - 1)) as f64 / (steps - 1) as f64).round() as usize)
            .collect())
    }
}

/// Map 0/1 occupancy into the ±1 diffusion space.
pub fn to_signed(v: f32) -> f32 {
    2.0 * v - 1.0
}

pub fn from_signed(v: f32) -> f32 {
    ((v + 1.0) * 0.5).clamp(0.0, 1.0)
}

/// Closed-form marginal x_t = √ᾱ_t x0 + √(1−ᾱ_t) ε.
pub fn forward_diffuse(x0: &[f32], t: usize, noise: &[f32], s: &NoiseSchedule) -> Result<Vec<f32>, UpsamplerError> {
    s.check(t)?;
    if x0.len() != noise.len() {
        return Err(UpsamplerError::Shape(format!("x0 has {} values, noise {}", x0.len(), noise.len())));
    }
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(&x, &e)| (a * x as f64 + b * e as f64) as f32).collect())
}

/// x̂0 = (x_t − √(1−ᾱ_t) ε̂) / √ᾱ_t, computed in f64.
pub fn predict_x0(xt: &[f32], eps: &[f32], t: usize, s: &NoiseSchedule) -> Vec<f64> {
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    xt.iter().zip(eps).map(|(&x, &e)| (x as f64 - b * e as f64) / a).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_endpoints() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 0.02).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.3, 0.3).unwrap();
        assert_eq!(s.alpha_bar(1), 0.7);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
        assert!(make_schedule(0, 0.1, 0.2).is_err());
    }

    #[test]
    fn timesteps_cover_both_ends() {
        let s = NoiseSchedule::default();
        let ts = s.ddim_timesteps(100).unwrap();
        assert_eq!(ts.len(), 100);
        assert_eq!((ts[0], ts[99]), (1000, 1));
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(s.ddim_timesteps(1000).unwrap(), (1..=1000).rev().collect::<Vec<_>>());
        assert!(s.ddim_timesteps(1001).is_err());
    }

    #[test]
    fn zero_noise_scales_x0() {
        let s = NoiseSchedule::default();
        let x = forward_diffuse(&[1.0, -1.0], 10, &[0.0, 0.0], &s).unwrap();
        let a = s.alpha_bar(10).sqrt() as f32;
        assert_eq!(x, vec![a, -a]);
        assert!(forward_diffuse(&[1.0], 0, &[0.0], &s).is_err());
        assert!(forward_diffuse(&[1.0], 1001, &[0.0], &s).is_err());
    }

    #[test]
    fn posterior_of_first_step_is_x0() {
        let s = NoiseSchedule::default();
        assert_eq!(s.posterior_variance(1), 0.0);
        let (c0, ct) = s.posterior_mean_coefs(1);
        assert!((c0 - 1.0).abs() < 1e-12 && ct.abs() < 1e-12);
    }
}
