mod common;

use std::fs;

use mcnn::data::{
    assemble, curate, parse_fasta, plan_nested_folds, read_dataset, read_metadata, split_by_era, write_dataset,
    DropReason, LabelSchema, SequenceIndex,
};

const HA: &str = "\
>A/chicken/1|IRD
MKAILVVLLYTFATANADTLCIGYHANNSTDTVDTVLEKNVTVTHSVNLLED
>A/chicken/1|GISAID
MKAILVVLLYTFATANADTLCIGYHANNSTDTVDTVLEKNVTVTHSVNLLED
>A/swine/2
MKAIIVLLMVVTSNADRICTGITSSNSPHVVKTATQGEVNVTGVIPLTTTPTK
>A/human/3
MKTIIALSYILCLVFAQKLPGNDNSTATLCLGHHAVPNGTIVKTITNDQIEV
>A/mallard/4
MEKIVLLLAIVSLVKSDQICIGYHANNSTEQVDTIMEKNVTVTHAQDILEKT
>A/mallard/5
MEKIVLLLAIVSLVKSDQICIGYHANNSTEQVDTIMEKNVTVTHAQDILEKT
";

const NA: &str = "\
>A/chicken/1
MNPNQKIITIGSICMVIGIVSLMLQIGNIISIWVSHSIQTGNQHQAEPCNQS
>A/swine/2
MNPNQKIITIGSVSLTISTICFFMQIAILITTVTLHFKQYEFNSPPNNQVML
>A/human/3
MNPNQKIITIGSVSLTISTICFFMQIAILITTVTLHFKQYEFNSPPNNQVML
>A/mallard/4
MNPNQKIITIGSICMVIGIVSLMLQIGNIISIWVSHSIQTGNQHQAEPCNQS
>A/mallard/5
MNPNQKIITIGSICMVIGIVSLMLQIGNIISIWVSHSIQTGNQHQAEPCNQS
";

const META: &str = "strain_id\tsource\thost\tsubtype\tyear\tcompleteness
A/chicken/1\tIRD\tChicken\tH5N1\t2015\tcomplete
A/chicken/1\tGISAID\tChicken\tH5N1\t2015\tcomplete
A/swine/2\tIRD\tswine\tH1N1\t2021\tcomplete
A/human/3\tIRD\tHuman\tH0N0\t2019\tcomplete
A/mallard/4\tIRD\tMallard\tH5N1\t2018\tincomplete
A/mallard/5\tIRD\tunicorn\tH5N1\t2018\tcomplete
";

#[test]
fn raw_files_to_curated_folds() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    };
    let ha = parse_fasta(&write("ha.fasta", HA)).unwrap();
    let na = parse_fasta(&write("na.fasta", NA)).unwrap();
    let meta = read_metadata(&write("meta.tsv", META)).unwrap();
    assert_eq!(meta.len(), 6);

    let raw = assemble(&meta, &SequenceIndex::from_fasta(&ha), &SequenceIndex::from_fasta(&na));
    let schema = LabelSchema::default_schema();
    let (records, log) = curate(&raw, &schema);

    let ids: Vec<&str> = records.iter().map(|r| r.strain_id.as_str()).collect();
    assert_eq!(ids, ["A/chicken/1", "A/swine/2", "A/mallard/4"]);
    assert_eq!(log.count(DropReason::DedupGisaid), 1);
    assert_eq!(log.count(DropReason::H0N0), 1);
    assert_eq!(log.count(DropReason::UnmappedHost), 1);
    assert_eq!(log.kept, 3);
    assert_eq!(records[0].host_class, "Phasianidae");
    assert_eq!((records[0].ha_subtype.as_str(), records[0].na_subtype.as_str()), ("H5", "N1"));

    let era = split_by_era(&records);
    assert_eq!(era.pre20.records.len(), 1);
    assert_eq!(era.post20.records.len(), 1);
    assert_eq!(era.incomplete.records.len(), 1);

    let path = dir.path().join("dataset.jsonl");
    write_dataset(&path, &records).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), records);
}

#[test]
fn empty_inputs_curate_to_nothing() {
    let (records, log) = curate(&[], &LabelSchema::default_schema());
    assert!(records.is_empty());
    assert_eq!((log.input, log.kept), (0, 0));
}

#[test]
fn fold_plan_survives_disk_round_trip() {
    let world = mcnn::synth::SyntheticWorld::new(3);
    let records = world.sample(60, 1, 0.1, "p");
    let plan = plan_nested_folds(&records, 5, 4, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("folds.json");
    plan.save(&path).unwrap();
    let loaded = mcnn::data::FoldPlan::load(&path).unwrap();
    assert_eq!(loaded, plan);
    let ids: Vec<String> = records.iter().map(|r| r.strain_id.clone()).collect();
    assert!(loaded.audit(&ids).is_empty());
    let mut tested: Vec<&String> = loaded.outer.iter().flat_map(|f| &f.test).collect();
    tested.sort();
    let mut all: Vec<&String> = ids.iter().collect();
    all.sort();
    assert_eq!(tested, all);
}
