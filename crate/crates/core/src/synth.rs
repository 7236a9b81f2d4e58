//! Synthetic census-income table with the column layout of UCI Adult:
//! 14 numerically encoded features and roughly a quarter positives, driven by
//! a logistic model with interactions so that trees have something to find.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};

use crate::error::Result;
use crate::tabular::TabularData;

pub const ADULT_FEATURES: [&str; 14] = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education_num",
    "marital_status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital_gain",
    "capital_loss",
    "hours_per_week",
    "native_country",
];

fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    WeightedIndex::new(weights).expect("static weights").sample(rng)
}

/// `n` rows, deterministic in `seed`.
pub fn adult_like(n: usize, seed: u64) -> Result<TabularData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fnlwgt = LogNormal::<f64>::new(12.0, 0.5).expect("valid");
    let gain = LogNormal::<f64>::new(8.5, 1.0).expect("valid");
    let loss = Normal::<f64>::new(1900.0, 300.0).expect("valid");
    let hours = Normal::<f64>::new(40.0, 12.0).expect("valid");
    let noise = Normal::<f64>::new(0.0, 0.6).expect("valid");
    // Education levels 1..=16, weighted like the census: HS-grad, some college, bachelors.
    let edu_weights = [0.2, 0.5, 1.0, 2.0, 1.6, 2.8, 3.6, 1.3, 32.0, 22.0, 4.2, 3.3, 16.4, 5.4, 1.8, 1.3];
    let occupation_premium = [0.0, -0.6, 0.9, -0.3, 0.8, -0.5, -0.4, -0.7, 0.3, -0.2, 0.6, -0.9, 0.2, 0.4];

    let mut features = Vec::with_capacity(n * ADULT_FEATURES.len());
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let age = 17.0 + (73.0 * u.powf(1.6)).floor();
        let workclass = pick(&mut rng, &[70.0, 8.0, 6.0, 4.0, 3.5, 3.0, 0.5, 5.0]) as f64;
        let weight = fnlwgt.sample(&mut rng).round();
        let education_num = (pick(&mut rng, &edu_weights) + 1) as f64;
        let education = (education_num as i64 * 7 % 16) as f64;
        let married_p = if age < 25.0 {
            0.08
        } else if age < 35.0 {
            0.45
        } else {
            0.6
        };
        let sex = if rng.gen_bool(0.67) { 1.0 } else { 0.0 };
        let married = rng.gen_bool(married_p);
        let marital_status = if married {
            2.0
        } else {
            [0.0, 1.0, 3.0, 4.0, 5.0, 6.0][pick(&mut rng, &[45.0, 20.0, 4.0, 4.0, 3.0, 1.0])]
        };
        let relationship = match (married, sex == 1.0) {
            (true, true) => 0.0,
            (true, false) => 5.0,
            (false, _) => 1.0 + pick(&mut rng, &[40.0, 25.0, 10.0, 5.0]) as f64,
        };
        let occupation = pick(&mut rng, &[1.0; 14]);
        let race = pick(&mut rng, &[85.0, 9.5, 3.0, 1.0, 1.5]) as f64;
        let capital_gain = if rng.gen_bool(0.08) { gain.sample(&mut rng).round() } else { 0.0 };
        let capital_loss = if rng.gen_bool(0.045) { loss.sample(&mut rng).round().max(0.0) } else { 0.0 };
        let hours_per_week: f64 = hours.sample(&mut rng).round().clamp(1.0, 99.0);
        let native_country = if rng.gen_bool(0.9) { 0.0 } else { rng.gen_range(1..41) as f64 };

        let age_effect = -((age - 50.0) / 14.0).powi(2);
        let mut z = -1.95
            + 1.0 * age_effect
            + 0.38 * (education_num - 9.0)
            + if married { 2.1 } else { 0.0 }
            + 0.35 * sex
            + occupation_premium[occupation]
            + 0.035 * (hours_per_week - 40.0)
            + if capital_gain > 7000.0 {
                4.0
            } else if capital_gain > 0.0 {
                0.6
            } else {
                0.0
            }
            + if capital_loss > 1800.0 { 1.2 } else { 0.0 }
            + if married && education_num >= 13.0 { 0.7 } else { 0.0 }
            + noise.sample(&mut rng);
        if workclass == 6.0 {
            z -= 2.0;
        }
        let y = rng.gen_bool(1.0 / (1.0 + (-z).exp()));

        features.extend_from_slice(&[
            age,
            workclass,
            weight,
            education,
            education_num,
            marital_status,
            occupation as f64,
            relationship,
            race,
            sex,
            capital_gain,
            capital_loss,
            hours_per_week,
            native_country,
        ]);
        labels.push(y);
    }
    TabularData::new(ADULT_FEATURES.iter().map(|s| s.to_string()).collect(), features, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_base_rate() {
        let t = adult_like(20_000, 1).unwrap();
        assert_eq!(t.n_features(), 14);
        assert_eq!(t.n_rows(), 20_000);
        let rate = t.labels().unwrap().iter().filter(|&&y| y).count() as f64 / 20_000.0;
        assert!((0.18..0.30).contains(&rate), "positive rate {rate}");
        assert_eq!(t, adult_like(20_000, 1).unwrap());
    }
}
