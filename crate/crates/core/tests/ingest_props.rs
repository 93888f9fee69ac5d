use std::collections::BTreeMap;

use proptest::prelude::*;

use censusflow::ingest::{
    build_registry, import_csv, match_commune, name_similarity, normalize_name, BuildOptions,
    ColumnMapping, Gazetteer, MatchConfig, Resolutions,
};

const GAZETTEER: &str = "code,canonical_name,department,variants
03190,Moulins,03,Moulins-sur-Allier
03195,Neuilly-le-Réal,03,
03310,Vichy,03,
03185,Montluçon,03,
58180,Moulins-Engilbert,58,
18150,Moulins-sur-Yèvre,18,
03082,Cusset,03,
";

fn gazetteer() -> Gazetteer {
    Gazetteer::from_csv(GAZETTEER.as_bytes()).unwrap()
}

fn row() -> impl Strategy<Value = (String, String, String, String)> {
    let year = prop_oneof![
        Just("1906".to_string()),
        Just("1911".to_string()),
        Just("1907".to_string()),
        Just("19x6".to_string()),
        Just(String::new()),
    ];
    let commune = prop_oneof![
        Just("Moulins".to_string()),
        Just("MOULINS".to_string()),
        Just("Moulin".to_string()),
        Just("Vichi".to_string()),
        Just("Neuilly le Real".to_string()),
        Just("Paris".to_string()),
        Just(String::new()),
    ];
    let archival = prop_oneof![Just("6M1".to_string()), Just("6M2".to_string())];
    let path = (0..6u8).prop_map(|i| {
        if i == 5 {
            String::new()
        } else {
            format!("d/vue{i}.jpg")
        }
    });
    (year, commune, archival, path)
}

proptest! {
    #[test]
    fn normalization_is_idempotent(s in "\\PC{0,24}") {
        let once = normalize_name(&s);
        prop_assert_eq!(normalize_name(&once), once);
    }

    #[test]
    fn similarity_is_symmetric_and_one_only_on_equal_forms(a in "[A-Za-zéèÉ' -]{0,12}", b in "[A-Za-zéèÉ' -]{0,12}") {
        let s = name_similarity(&a, &b);
        prop_assert_eq!(s, name_similarity(&b, &a));
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s == 1.0, normalize_name(&a) == normalize_name(&b));
    }

    #[test]
    fn every_row_lands_exactly_once(rows in proptest::collection::vec(row(), 1..30)) {
        let mut csv = String::from("annee;commune;cote;fichier\n");
        for (y, c, a, p) in &rows {
            csv.push_str(&format!("{y};{c};{a};{p}\n"));
        }
        let mapping = ColumnMapping::parse("annee=YEAR\ncommune=COMMUNE\ncote=ARCHIVAL_ID\nfichier=IMAGE_PATH\n").unwrap();
        let imported = import_csv(csv.as_bytes(), &mapping).unwrap();
        prop_assert_eq!(imported.rows.len(), rows.len());
        let out = build_registry(&imported.rows, &gazetteer(), &Resolutions::default(), &BuildOptions::default()).unwrap();

        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        for (_, image) in out.registry.images() {
            *seen.entry(image.source_row).or_default() += 1;
        }
        for e in &out.exceptions {
            *seen.entry(e.row).or_default() += 1;
        }
        let expected: BTreeMap<usize, usize> = (1..=rows.len()).map(|r| (r, 1)).collect();
        prop_assert_eq!(seen, expected);

        let again = build_registry(&imported.rows, &gazetteer(), &Resolutions::default(), &BuildOptions::default()).unwrap();
        prop_assert_eq!(again, out);
    }

    #[test]
    fn ranking_is_deterministic_and_ignores_gazetteer_order(name in "[A-Za-z -]{0,16}", rot in 0usize..7) {
        let config = MatchConfig { threshold: 0.3, auto_threshold: 0.95 };
        let g = gazetteer();
        let mut entries = g.entries().to_vec();
        entries.rotate_left(rot);
        let rotated = Gazetteer::new(entries).unwrap();
        let a = match_commune(&name, &g, None, &config).unwrap();
        let b = match_commune(&name, &g, None, &config).unwrap();
        let c = match_commune(&name, &rotated, None, &config).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
    }
}
