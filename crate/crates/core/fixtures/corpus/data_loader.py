from keras.preprocessing.image import ImageDataGenerator


def make_generators(train_dir, batch_size=32):
    gen = ImageDataGenerator(rescale=1.0 / 255, validation_split=0.2)
    train = gen.flow_from_directory(train_dir, target_size=(64, 64), batch_size=batch_size, subset='training')
    val = gen.flow_from_directory(train_dir, target_size=(64, 64), batch_size=batch_size, subset='validation')
    return train, val
