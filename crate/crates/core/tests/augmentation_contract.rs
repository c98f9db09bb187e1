mod common;

#[test]
fn augmentation_contract_on_200_train_instances() {
    common::augmentation::check_augmentation_contract();
}
