use bubsim_web::{calibrate_json, generate_json, parameters_json, simulate_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn generate_covers_the_horizon() {
    let v = parse(&generate_json(1).unwrap());
    assert_eq!(v["dates"].as_array().unwrap().len(), 91);
    assert_eq!(v["cases"].as_array().unwrap().len(), 91);
    assert_eq!(v["truth"]["icu"].as_array().unwrap().len(), 91);
    assert_eq!(v["dates"][0], "2020-09-01");
    assert_eq!(generate_json(1).unwrap(), generate_json(1).unwrap());
}

#[test]
fn parameter_list_matches_registry() {
    let v = parse(&parameters_json());
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 22);
    for p in list {
        let (lo, hi, d) = (p["lower"].as_f64().unwrap(), p["upper"].as_f64().unwrap(), p["default"].as_f64().unwrap());
        assert!(lo <= d && d <= hi);
    }
}

#[test]
fn simulate_defaults_and_overrides() {
    let base = parse(&simulate_json(2, "").unwrap());
    assert!(base["epsilon"].as_f64().unwrap().is_finite());
    assert_eq!(base["median"]["bed"].as_array().unwrap().len(), 91);
    let other = parse(&simulate_json(2, r#"{"DaysInfectedToHospital": 3}"#).unwrap());
    assert_ne!(base["epsilon"], other["epsilon"]);
    assert!(simulate_json(2, r#"{"DaysInfectedToHospital": 300}"#).unwrap_err().contains("DaysInfectedToHospital"));
    assert!(simulate_json(2, r#"{"Bogus": 1}"#).is_err());
    assert!(simulate_json(2, "[").is_err());
}

#[test]
fn calibrate_two_parameters() {
    let v = parse(&calibrate_json(3, "DaysInfectedToHospital", "GammaShapeParameter", 20, 6).unwrap());
    let trace: Vec<f64> = v["trace"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(trace.len(), 20);
    assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(v["best_epsilon"].as_f64().unwrap(), *trace.last().unwrap());
    assert_eq!(v["contour"]["values"].as_array().unwrap().len(), 6);
    assert_eq!(v["points"].as_array().unwrap().len(), 20);
    assert!(calibrate_json(3, "DaysInfectedToHospital", "DaysInfectedToHospital", 20, 6).is_err());
    assert!(calibrate_json(3, "DaysInfectedToHospital", "Nope", 20, 6).is_err());
}
